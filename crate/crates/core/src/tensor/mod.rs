//! Dense matrices with reverse-mode differentiation, perceptrons,
//! optimizer and gradient checking.

pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use nn::{init_mlp2, kl_std_normal, mlp2_forward, reparameterize, Activation, Mlp2Shape};
pub use optim::Adam;
pub use params::{Checkpoint, ParamStore};
pub use tape::{sigmoid, Gradients, Matrix, Tape, Var};
