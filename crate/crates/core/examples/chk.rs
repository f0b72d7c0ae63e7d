fn main(){
  for name in ["lasso-ordering","mars"] {
    let t=std::time::Instant::now();
    let o = slime_core::repro::run_experiment(name, 8).unwrap();
    println!("{}\n{}", o.report, o.checks.iter().map(|c| c.line()).collect::<Vec<_>>().join("\n"));
    println!("{:?}", t.elapsed());
  }
}
