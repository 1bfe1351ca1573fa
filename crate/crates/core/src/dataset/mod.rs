//! Feature and annotation files, the step-to-seconds mapping, and the
//! synthetic corpus generator.

mod annotations;
mod features;
mod grid;
mod manifest;
mod split;
mod synth;

pub use annotations::{
    load_annotations, merge_segments, write_annotations, AnnotationRecord, AnnotationTrack, Annotations, Behavior,
    Segment,
};
pub use features::{load_features, FeatureSequence, FEATURE_MAGIC, FEATURE_VERSION};
pub use grid::{TimeGrid, DEFAULT_FPS, DEFAULT_FRAMES_PER_STEP};
pub use manifest::{
    feature_path, load_corpus, load_manifest, write_corpus, write_manifest, Corpus, ManifestEntry, Split,
    ANNOTATIONS_FILE, FEATURES_DIR, MANIFEST_FILE,
};
pub use split::train_test_split;
pub use synth::{class_signatures, synth_generate, SynthConfig, SynthCorpus};
