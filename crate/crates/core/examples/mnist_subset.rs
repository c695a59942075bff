//! Writes the 0-vs-1 MNIST subset used by the desk-scale runs.
//!
//! Usage: mnist_subset <mnist-dir> <out-dir>
//!
//! Takes the first 1000 zeros and 1000 ones of the training file and the
//! first 200 of each from the test file, in file order.

use pcdbn::data_io::{load_mnist, save_idx, RawDataset};
use std::path::PathBuf;

fn pick(ds: &RawDataset, per_class: usize) -> RawDataset {
    let labels = ds.labels.as_ref().expect("labels");
    let mut counts = [0usize; 2];
    let mut out = RawDataset { instances: Vec::new(), shape: ds.shape.clone(), labels: Some(Vec::new()) };
    for (x, &y) in ds.instances.iter().zip(labels) {
        if y < 2 && counts[y] < per_class {
            counts[y] += 1;
            out.instances.push(x.clone());
            out.labels.as_mut().unwrap().push(y);
        }
    }
    out
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.len() != 3 {
        eprintln!("usage: {} <mnist-dir> <out-dir>", args[0]);
        std::process::exit(2);
    }
    let src = PathBuf::from(&args[1]);
    let dst = PathBuf::from(&args[2]);
    std::fs::create_dir_all(&dst).expect("create output dir");
    for (split, per_class, prefix) in [("train", 1000, "train"), ("t10k", 200, "test")] {
        let ds = load_mnist(
            &src.join(format!("{split}-images-idx3-ubyte")),
            &src.join(format!("{split}-labels-idx1-ubyte")),
        )
        .expect("read MNIST");
        let sub = pick(&ds, per_class);
        save_idx(
            &sub,
            &dst.join(format!("{prefix}-01-images-idx3-ubyte")),
            Some(&dst.join(format!("{prefix}-01-labels-idx1-ubyte"))),
        )
        .expect("write subset");
        println!("{prefix}: {} instances", sub.len());
    }
}
