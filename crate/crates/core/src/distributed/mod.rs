//! Attribution across ownership boundaries.
//!
//! A coordinator owns a meta-model over purchased scores and its own
//! features. Each score is owned by a node that keeps its model and raw
//! features private. Per (explicand, baseline) the coordinator computes the
//! meta-model chain, sends each node the attribution of its score, and the
//! node pushes that value back onto its raw features by scaling its own
//! chain with `value / score_delta`. Only ids and attribution scalars cross
//! the wire.

mod coordinator;
mod node;
mod transport;
mod wire;

pub use coordinator::{
    coordinate, stitch_pipeline, CoordinateOptions, CoordinationOutcome, ExplicandFailure,
    MetaModel, ScoreSource, BOUNDARY_TOLERANCE,
};
pub use node::{
    load_registry, load_registry_file, validate_registry, NodeDescriptor, NodeService, ScoreModel,
};
pub use transport::{
    serve_tcp, CapturedFrame, LoopbackTransport, NodeServer, TcpTransport, Transport,
};
pub use wire::{
    decode_message, encode_message, Message, ProtocolError, ScoreAttributionRequest,
    ScoreAttributionResponse, PROTOCOL_VERSION,
};
