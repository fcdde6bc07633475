// probe: desk-scale accuracy under alternative per-layer lr scalings
use symconv::data::*;
use symconv::harness::*;
use symconv::network::*;
use symconv::symmetry::T2bMode;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let variant = args[1].as_str();
    let dir = std::path::Path::new("data/mnist");
    let train = load_idx(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte")).unwrap();
    let test = load_idx(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte")).unwrap();
    let train = stratified_subset(&train, 600, 0xd15c);
    let test = stratified_subset(&test, 100, 0xd15d);
    let data = prepare_splits(&train, &test, 0.9, 90).unwrap();
    // lr chosen so that conv layers see: a=0.001/sqrt(m), b=0.005/sqrt(m) (conv1 sees 0.001), c=flat 0.001
    let lr = match variant { "a" => 0.001, "b" => 0.005, _ => 0.001 };
    let cfg = TrainingConfig { lr, epochs: 5, ..Default::default() };
    // variant c (flat) needs a code change; emulate by pre-scaling per layer is not possible here,
    // so probe only a and b.
    let cond = Condition::parse("L-R-R").unwrap();
    let (r, _) = train_run(cond, &data, &cfg, 42).unwrap();
    println!("variant {variant} lr {lr}: test acc {:.2} ce {:.4}", r.test.acc, r.test.ce);
    for h in &r.history { println!("  epoch {} val {:.2}", h.epoch, h.val_acc); }
}
