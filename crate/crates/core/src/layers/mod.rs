pub mod activation;
pub mod conv;
pub mod norm;
pub mod pool;

pub use activation::{concat_channels, relu, softmax_channels};
pub use conv::{
    avg_pool, conv2d, conv_param_count, depthwise_conv2d, sep_conv2d, sep_conv_param_count, up_conv_2x2,
    upsample_nearest, ConvGeom, ConvParams, Padding, UP_CONV_PADDING,
};
pub use norm::{batch_norm_eval, batch_norm_train, BatchNormState, BatchStats, Mode, BN_EPS, BN_MOMENTUM};
pub use pool::max_pool_2x2;
