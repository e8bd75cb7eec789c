//! Dense tensors, a reverse-mode tape, small feed-forward networks and
//! first-order optimizers.

pub mod checkpoint;
pub mod gradcheck;
pub mod network;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, NamedNetwork};
pub use gradcheck::finite_diff_check;
pub use network::{Activation, BoundNetwork, Layer, Network};
pub use optim::{OptimizerKind, OptimizerState, Schedule};
pub use tape::{concat_rows, Gradients, Tape, Var};
pub use tensor::DenseTensor;
