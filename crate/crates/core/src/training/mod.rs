//! Loss, reverse-mode gradients, L-BFGS and stage schedules.

pub mod backprop;
pub mod lbfgs;
pub mod schedule;

pub use backprop::{
    backprop, backprop_prepared, gradient_check, loss, prepare_pairs, total_loss, total_loss_and_gradient, GradientCheck, PreparedPair,
    TrainingPair, GRADIENT_ABSOLUTE_FLOOR, GRADIENT_RELATIVE_TOLERANCE,
};
pub use lbfgs::{minimize, FitReport, LbfgsOptions, Objective, Termination};
pub use schedule::{lambda_coordinates, lbfgs_fit, lbfgs_fit_subset, train_schedule, FitOptions, ScheduleMode, TrainOptions, TrainReport};
