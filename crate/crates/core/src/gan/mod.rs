//! Two-phase adversarial reconstruction with neighbour-slice coherence.

mod losses;
mod model;
mod train;
mod types;

pub use losses::{
    adversarial_objective, discriminator_objective, generator_objective, loss_discriminator, loss_generator,
    loss_perceptual, perceptual_objective, pixel_objective, GeneratorLoss, ObjectiveScale, PROB_EPS,
};
pub use model::{
    coherence_inputs, coherent_pass, generate_neighbors, infer_volume, neighbor_flows, reconstruct, reconstruct_nodes,
    self_conditioned, CoherentNodes, FlowEstimator,
};
pub use train::{log_header, optimizer_path, train, write_log, EpochLog, GanState, GeneratorPass, CHECKPOINT_KIND, LOG_COLUMNS};
pub use types::{DEFAULT_INTENSITY_SCALE, LOW_DOSE_FLOW_ALPHA, LOW_DOSE_FLOW_ITERS, FlowMode, LossWeights, PerceptualReduction, NeighborSet, SliceBatch, TrainConfig};
