//! Feature files, manifests, label vocabularies, and the synthetic corpus.

mod feature;
mod manifest;
mod synth;

pub(crate) use feature::write_atomic;
pub use feature::{
    decode_feature, encode_feature, file_len, read_feature, read_feature_header, write_feature,
    HEADER_LEN, MAGIC,
};
pub use manifest::{
    load_dataset, read_manifest, reference_labels, split_digest, write_manifest, Dataset, Example,
    LabelClass, LabelVocabulary, ManifestRecord, DEFAULT_LABELS,
};
pub use synth::{gen_synthetic, SynthConfig, SynthCorpus};
