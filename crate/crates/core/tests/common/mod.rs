#![allow(dead_code)]

use std::path::PathBuf;

use fedrewind::data::{load_mnist_dir, Dataset};
use fedrewind::experiment::MNIST_DIR_ENV;

pub fn mnist_dir() -> PathBuf {
    std::env::var(MNIST_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|_| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mnist")))
}

pub fn mnist() -> Dataset {
    load_mnist_dir(mnist_dir()).expect("MNIST IDX files (see README)")
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
