//! Drive the experiment layer from a TOML string, as the CLI does.

use loctime::experiment::{run, Command, ExperimentConfig};

fn main() -> loctime::Result<()> {
    let dir = std::env::temp_dir().join("loctime-example");
    let mut cfg = ExperimentConfig::from_toml(
        r#"
        seed = 3
        [boundary]
        family = "sqrt-log"
        gamma = 1.5
        [survival]
        times = [1.0, 2.0, 5.0]
        n_paths = 50000
        "#,
    )?;
    cfg.out = dir;
    for _ in 0..2 {
        let r = run(Command::Survival, &cfg)?;
        println!(
            "{} cached={} files={}",
            r.dir.display(),
            r.cached,
            r.manifest.files.len()
        );
    }
    let c = run(Command::Classify, &cfg)?;
    println!("{}", c.summary);
    Ok(())
}
