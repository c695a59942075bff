//! Trains and evaluates on the bundled 0-vs-1 subset.
//!
//! Usage: desk_mnist [epsilon|inf] [epochs] [readout] [L] [rule]

use pcdbn::cheb_approx::ApproximatorKind;
use pcdbn::data_io::{load_mnist, normalize, NormalizationMode};
use pcdbn::network::{evaluate, features, train, NetworkSpec, Readout, SensitivityRule};
use std::path::Path;
use std::time::Instant;

fn main() {
    let a: Vec<String> = std::env::args().collect();
    let eps = a.get(1).map_or("inf", |s| s.as_str());
    let epochs: usize = a.get(2).map_or(50, |s| s.parse().unwrap());
    let readout = match a.get(3).map_or("cs", |s| s.as_str()) {
        "flat" => Readout::Flatten,
        "gm" => Readout::GroupMean,
        "cs" => Readout::CenterSurround,
        g => Readout::Grid(g.trim_start_matches("grid").parse().unwrap()),
    };
    let l: usize = a.get(4).map_or(7, |s| s.parse().unwrap());
    let rule = match a.get(5).map_or("all-groups", |s| s.as_str()) {
        "lemma2" => SensitivityRule::Lemma2,
        _ => SensitivityRule::AllGroups,
    };
    let dir = Path::new("data/mnist01");
    let load = |p: &str| {
        let raw = load_mnist(&dir.join(format!("{p}-01-images-idx3-ubyte")), &dir.join(format!("{p}-01-labels-idx1-ubyte"))).unwrap();
        normalize(&raw, NormalizationMode::PerPixel).unwrap().to_labeled_grids(2).unwrap()
    };
    let (tr, te) = (load("train"), load("test"));
    let mut spec = NetworkSpec { epochs, readout, seed: 1, ..NetworkSpec::default() };
    spec.layers[0].approximator = ApproximatorKind::ChebyshevTruncated(l);
    spec.sensitivity = rule;
    if eps != "inf" {
        spec.epsilon_total = Some(eps.parse().unwrap());
    }
    let t0 = Instant::now();
    let m = train(&spec, &tr).unwrap();
    let ev = evaluate(&m, &te).unwrap();
    let trainev = evaluate(&m, &tr).unwrap();
    println!("eps={eps} epochs={epochs} L={l} readout={readout:?} test_acc={:.4} train_acc={:.4} time={:.1}s", ev.accuracy, trainev.accuracy, t0.elapsed().as_secs_f64());
    print!("{}", m.accountant.render());
    for k in 0..m.layers[0].geometry.k {
        let f = m.layers[0].filter(k);
        println!("group {k}: b={:+.4} w=[{}]", m.layers[0].group_bias[k], f.iter().map(|x| format!("{:+.3}", x)).collect::<Vec<_>>().join(" "));
    }
    println!("softmax {:?}", m.softmax.weights);
    for c in 0..2 {
        let f: Vec<Vec<f64>> = tr.grids.iter().zip(&tr.labels).filter(|(_, &l)| l == c).map(|(v, _)| features(&m.spec, &m.layers, v).unwrap()).collect();
        let d = f[0].len();
        let mean: Vec<f64> = (0..d).map(|j| f.iter().map(|x| x[j]).sum::<f64>() / f.len() as f64).collect();
        let sd: Vec<f64> = (0..d).map(|j| (f.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / f.len() as f64).sqrt()).collect();
        println!("class {c} feature mean {mean:.4?} sd {sd:.4?}");
    }
    if let Some(last) = m.metrics.iter().filter(|r| r.stage == "layer1").last() { println!("last layer metric {:?}", last); }
}
