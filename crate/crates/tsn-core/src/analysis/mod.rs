//! Mechanistic analyses over captured traces: rotary frequency spectra,
//! query/key geometry, attention-sink shifts, and the attention-score
//! perturbation decomposition.

mod delta_attn;
mod geometry;
mod sinks;
mod spectrum;

pub use delta_attn::{
    delta_attention, delta_attn_from_traces, restrict_to_frequency, DeltaAttnDecomposition,
};
pub use geometry::{geometry_report, GeometryDeltas, GeometryReport, GeometryStats, RowSelection};
pub use sinks::{sink_shift, sink_shift_from_traces, HeadSinkStats, LayerSinkStats, SinkShiftReport};
pub use spectrum::{
    activation_spectrum, mask_frequency_histogram, spectrum_report, FreqHistogram, HeadSpectrum,
    SpectrumEntry, SpectrumReport, SpectrumTable,
};

/// Default threshold on the absolute BOS-column attention change.
pub const DEFAULT_SINK_THRESHOLD: f64 = 0.01;
