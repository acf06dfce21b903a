//! Middlebury color-wheel visualization.

use super::FlowField;
use crate::media::Image;

/// Hue segment lengths: red-yellow, yellow-green, green-cyan, cyan-blue,
/// blue-magenta, magenta-red.
pub const WHEEL_SEGMENTS: [usize; 6] = [15, 6, 4, 11, 13, 6];

fn build_wheel() -> Vec<[f32; 3]> {
    let [ry, yg, gc, cb, bm, mr] = WHEEL_SEGMENTS;
    let ramp = |i: usize, n: usize| (255 * i / n) as f32;
    let mut wheel = Vec::with_capacity(55);
    for i in 0..ry {
        wheel.push([255.0, ramp(i, ry), 0.0]);
    }
    for i in 0..yg {
        wheel.push([255.0 - ramp(i, yg), 255.0, 0.0]);
    }
    for i in 0..gc {
        wheel.push([0.0, 255.0, ramp(i, gc)]);
    }
    for i in 0..cb {
        wheel.push([0.0, 255.0 - ramp(i, cb), 255.0]);
    }
    for i in 0..bm {
        wheel.push([ramp(i, bm), 0.0, 255.0]);
    }
    for i in 0..mr {
        wheel.push([255.0, 0.0, 255.0 - ramp(i, mr)]);
    }
    wheel.iter().map(|c| c.map(|v| v / 255.0)).collect()
}

/// Color of a displacement already normalized so that magnitude 1 means
/// full saturation. Magnitudes above 1 are clamped.
pub fn wheel_color(wheel: &[[f32; 3]], u: f32, v: f32) -> [f32; 3] {
    let n = wheel.len();
    let rad = (u * u + v * v).sqrt().min(1.0);
    let angle = (-v).atan2(-u) / std::f32::consts::PI;
    let fk = (angle + 1.0) / 2.0 * (n - 1) as f32;
    let k0 = (fk.floor() as usize).min(n - 1);
    let k1 = if k0 + 1 == n { 0 } else { k0 + 1 };
    let f = fk - k0 as f32;
    let mut out = [0.0; 3];
    for c in 0..3 {
        let col = (1.0 - f) * wheel[k0][c] + f * wheel[k1][c];
        out[c] = 1.0 - rad * (1.0 - col);
    }
    out
}

/// Renders a flow field. Magnitudes are divided by `max_magnitude`, or by
/// the field's own maximum when `None`; zero flow is white.
pub fn colorize(flow: &FlowField, max_magnitude: Option<f32>) -> Image {
    let wheel = build_wheel();
    let norm = match max_magnitude {
        Some(m) if m > 0.0 => m,
        Some(_) => 1.0,
        None => {
            let m = flow.magnitude().iter().cloned().fold(0.0f32, f32::max);
            if m > 0.0 {
                m
            } else {
                1.0
            }
        }
    };
    let (h, w) = flow.dims();
    let colors: Vec<[f32; 3]> = flow
        .u()
        .iter()
        .zip(flow.v().iter())
        .map(|(&u, &v)| wheel_color(&wheel, u / norm, v / norm))
        .collect();
    Image::from_fn(h, w, |y, x, c| colors[y * w + x][c])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wheel_has_55_bins() {
        let wheel = build_wheel();
        assert_eq!(wheel.len(), 55);
        assert_eq!(wheel[0], [1.0, 0.0, 0.0]);
        assert_eq!(wheel[15], [1.0, 1.0, 0.0]);
        assert_eq!(wheel[21], [0.0, 1.0, 0.0]);
    }

    #[test]
    fn zero_flow_is_white() {
        let img = colorize(&FlowField::zeros(4, 5), None);
        assert!(img.pixels().iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn positive_u_is_red() {
        let img = colorize(&FlowField::constant(3, 3, 2.5, 0.0), None);
        for y in 0..3 {
            for x in 0..3 {
                let p = [img.get(y, x, 0), img.get(y, x, 1), img.get(y, x, 2)];
                assert_eq!(p, [1.0, 0.0, 0.0]);
            }
        }
    }

    #[test]
    fn self_normalization_is_scale_invariant() {
        let f = FlowField::from_fn(6, 7, |y, x| ((x as f32 - 3.0) * 0.7, (y as f32 - 2.5) * 1.3)).unwrap();
        let a = colorize(&f, None);
        let b = colorize(&f.scaled(3.5), None);
        assert!(a.mean_abs_diff(&b).unwrap() < 1e-5);
    }

    #[test]
    fn hue_depends_on_direction_saturation_on_magnitude() {
        let wheel = build_wheel();
        let a = wheel_color(&wheel, 0.2, 0.1);
        let b = wheel_color(&wheel, 0.6, 0.3);
        // same direction: (1 - col) scales with radius
        for c in 0..3 {
            assert!(((1.0 - b[c]) - 3.0 * (1.0 - a[c])).abs() < 1e-5);
        }
        // beyond the normalization radius colors saturate
        assert_eq!(wheel_color(&wheel, 2.0, 1.0), wheel_color(&wheel, 4.0, 2.0));
    }

    #[test]
    fn fixed_normalization_gives_shared_scale() {
        let small = FlowField::constant(2, 2, 1.0, 1.0);
        let big = FlowField::from_fn(2, 2, |y, _| if y == 0 { (1.0, 1.0) } else { (5.0, 0.0) }).unwrap();
        let a = colorize(&small, Some(8.0));
        let b = colorize(&big, Some(8.0));
        for c in 0..3 {
            assert_eq!(a.get(0, 0, c), b.get(0, 0, c));
        }
    }
}
