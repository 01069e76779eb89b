//! Critique-guided distillation at desk scale: a tiny transformer student,
//! synthetic reasoning tasks with an exact teacher, the augmentation loop,
//! the training objectives and the analysis probes.

pub mod datagen;
pub mod engine;
pub mod probes;
pub mod seed;
pub mod taskworld;
pub mod tokenizer;
pub mod training;
