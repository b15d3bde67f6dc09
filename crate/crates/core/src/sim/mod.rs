//! Synthetic data: coherent phantom volumes and the low-dose simulation that
//! turns them into training batches.

pub mod dataset;
pub mod manifest;
pub mod phantom;

pub use manifest::{
    load_dataset, manifest_path, read_manifest, write_dataset, DatasetManifest, SliceEntry, VolumeEntry, MANIFEST_NAME,
};

pub use dataset::{
    build_dataset, collect_batches, load_raw_volume, save_raw_volume, simulate_collection, simulate_slice, slice_seed, validation_sinograms,
    Dataset, DatasetSpec, SimulatedVolume, DEFAULT_SIGMA,
};

pub use phantom::{disk, gaussian_blob, make_phantom_volume, shepp_logan, PhantomKind, PhantomVolume};
