//! Feature-record ingestion, splitting, batching and the planted-structure
//! generator.

mod io;
mod record;
mod split;
mod synth;

pub use io::{load_dataset, save_dataset, write_dataset, FORMAT_NAME, FORMAT_VERSION};
pub use record::{DatasetHeader, FeatureRecord, MAX_OBJECTS, MAX_WORDS};
pub use split::{batches, split, SplitFractions};
pub use synth::{synth_generate, synth_generate_with_prototypes, Prototypes, SynthConfig, WORDS_PER_TOPIC};
