use anyhow::{bail, Result};
use simflow_core::{colorize, read_flo, save_image};

use crate::VizFlowArgs;

pub fn run(a: &VizFlowArgs) -> Result<()> {
    if let Some(m) = a.max_magnitude {
        if !(m.is_finite() && m > 0.0) {
            bail!("--max-magnitude must be positive");
        }
    }
    let flow = read_flo(&a.flo)?;
    save_image(&colorize(&flow, a.max_magnitude), &a.out)?;
    println!("{} -> {}", a.flo.display(), a.out.display());
    Ok(())
}
