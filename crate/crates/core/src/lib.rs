pub mod equiv;
pub mod exec;
pub mod metrics;
pub mod minic;
pub mod tokenizer;
pub mod toyisa;
pub mod typeinfer;
