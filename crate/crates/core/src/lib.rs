pub mod data;
pub mod decode;
pub mod harness;
pub mod init;
pub mod model;
pub mod optim;
pub mod recurrent;
pub mod scorer;
pub mod synth;
pub mod tensor;

pub use data::{read_conll, write_conll, DataError, Sentence, Vocab};
pub use decode::{mst_decode, ParseTree};
pub use harness::{Config, HarnessError};
pub use model::{ModelError, ParserModel};
pub use tensor::{Precision, Scalar, Tensor};

pub type Parser32 = ParserModel<f32>;
pub type Parser64 = ParserModel<f64>;
