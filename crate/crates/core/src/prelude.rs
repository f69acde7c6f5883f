pub(crate) use alloc::boxed::Box;
pub(crate) use alloc::format;
pub(crate) use alloc::string::{String, ToString};
pub(crate) use alloc::vec;
pub(crate) use alloc::vec::Vec;
// Float supplies libm-backed f64 math in no_std builds; unused when a dependency links std, whose inherent f64 methods take over.
#[allow(unused_imports)]
pub(crate) use num_traits::Float;
