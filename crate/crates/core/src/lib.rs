//! Synthesis of image–flow–mask training triplets from still images,
//! a two-stream saliency segmentation network trained on mixtures of real
//! and simulated pairs, and the S/F/MAE saliency evaluation suite.

pub mod error;
pub mod estimation;
pub mod exchange;
pub mod flow;
pub mod generators;
pub mod media;
pub mod metrics;
pub mod pairs;
pub mod scene;
pub mod segnet;
pub mod training;

pub use error::{Error, Result};
pub use estimation::{estimate_flow, estimate_flow_external, ExternalEstimator, FlowEstimator, FlowEstimatorConfig, HornSchunck};
pub use exchange::{Exchange, StubFlowMode, StubFrameMode, StubKind, StubServer};
pub use flow::{colorize, flow_stats, read_flo, write_flo, FlowField, FlowStats};
pub use generators::{
    generate_external, generate_identity, generate_spatial_warp, generate_synthetic_scene, ExternalGenerator, FrameGenerator,
    FrameSequence, GenerationConfig, Generated, IdentityGenerator, SceneMotion, SpatialWarpGenerator, SyntheticScene,
    SyntheticSceneGenerator, WarpParams,
};
pub use media::{load_image, load_mask, resize, save_image, save_mask, Image, ResizeMode, SaliencyMap};
pub use metrics::{evaluate_dataset, f_measure, mae, s_measure, FMode, MetricReport};
pub use pairs::{
    build_final_pairs, build_temporary_pairs, ingest_real_video, load_manifest, materialize_dataset, simulate_sources, DatasetManifest,
    FlowKind, Provenance, TrainingPair,
};
pub use segnet::{load_checkpoint, save_checkpoint, NetworkConfig, SegNet};
pub use training::{train, MixtureSampler, PairPool, TrainConfig};
