//! Layer kernels with explicit forward and backward passes.

mod activation;
mod conv;
mod gemm;
mod loss;
mod optim;
mod pool;

pub use activation::{dropout, dropout_backward, relu, relu_backward, DropoutOutput};
pub(crate) use conv::conv2d_backward_params;
pub use conv::{
    conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward, ConvGrads, ConvSpec,
};
pub use loss::{softmax2, softmax_xent, LabelPlane, XentOutput};
pub use optim::sgd_step;
pub use pool::{maxpool_backward, maxpool_forward, MaxPoolOutput};
