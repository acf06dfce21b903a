//! Learned-estimator adapter over an exchange directory.
//!
//! Request layout: `<req_id>/a.png`, `<req_id>/b.png`, `<req_id>/request.json`.
//! The backend answers with `<req_id>/flow.flo` at the input resolution and
//! a `DONE` marker.

use serde::{Deserialize, Serialize};

use super::FlowEstimator;
use crate::error::{Error, Result};
use crate::exchange::{fnv1a, pixel_bytes, Exchange};
use crate::flow::{read_flo, FlowField};
use crate::media::{save_image, Image};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRequest {
    pub width: usize,
    pub height: usize,
    pub first: String,
    pub second: String,
    pub result: String,
}

pub fn estimate_flow_external(a: &Image, b: &Image, backend: &Exchange, req_id: &str) -> Result<FlowField> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.dims(),
            found: b.dims(),
        });
    }
    let dir = backend.open_request(req_id)?;
    save_image(a, dir.join("a.png"))?;
    save_image(b, dir.join("b.png"))?;
    let (h, w) = a.dims();
    backend.submit(
        &dir,
        &FlowRequest {
            width: w,
            height: h,
            first: "a.png".into(),
            second: "b.png".into(),
            result: "flow.flo".into(),
        },
    )?;
    backend.wait(&dir)?;
    let result = dir.join("flow.flo");
    let flow = read_flo(&result).map_err(|e| Error::BadResult(format!("{}: {e}", result.display())))?;
    if flow.dims() != (h, w) {
        return Err(Error::BadResult(format!(
            "flow is {}x{}, inputs are {h}x{w}",
            flow.height(),
            flow.width()
        )));
    }
    Ok(flow)
}

/// Flow estimation delegated to an out-of-process model. Request ids are
/// derived from the image contents, so repeated calls are reproducible.
#[derive(Debug, Clone)]
pub struct ExternalEstimator {
    pub exchange: Exchange,
    /// Recorded in pair provenance; the backend itself is a black box.
    pub backend_name: String,
}

impl ExternalEstimator {
    pub fn new(exchange: Exchange) -> Self {
        Self {
            exchange,
            backend_name: "external".into(),
        }
    }
}

impl FlowEstimator for ExternalEstimator {
    fn id(&self) -> String {
        self.backend_name.clone()
    }

    fn estimate(&self, a: &Image, b: &Image) -> Result<FlowField> {
        let ba = pixel_bytes(a.pixels().iter().cloned());
        let bb = pixel_bytes(b.pixels().iter().cloned());
        let req_id = format!("flow-{:016x}", fnv1a(&[&ba, &bb]));
        estimate_flow_external(a, b, &self.exchange, &req_id)
    }
}
