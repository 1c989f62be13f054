use std::path::Path;
use std::process::{Command, Output};

fn biaffine(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biaffine")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, n: &str, seed: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    let o = biaffine(&["synth", "--sentences", n, "--seed", seed, "--out", s(&path)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    path
}

#[test]
fn train_parse_eval_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let train = synth(dir.path(), "train.conll", "60", "1");
    let dev = synth(dir.path(), "dev.conll", "10", "2");
    let config = dir.path().join("tiny.cfg");
    std::fs::write(
        &config,
        "# tiny model\nembedding_size = 8\nlstm_size = 8\nlstm_depth = 1\narc_mlp_size = 8\nlabel_mlp_size = 4\nbatch_tokens = 200\n",
    )
    .unwrap();
    let model = dir.path().join("model");
    let o = biaffine(&[
        "train", "--config", s(&config), "--train", s(&train), "--dev", s(&dev), "--out", s(&model), "--set", "max_steps=4",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epoch"));
    assert!(model.join("manifest.json").exists() && model.join("train_log.json").exists());

    let pred = dir.path().join("pred.conll");
    for extra in [&[][..], &["--no-mst"][..]] {
        let mut args = vec!["parse", "--model", s(&model), "--input", s(&dev), "--output", s(&pred)];
        args.extend_from_slice(extra);
        let o = biaffine(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let o = biaffine(&["eval", "--gold", s(&dev), "--pred", s(&pred)]);
        assert_eq!(code(&o), 0);
        assert!(String::from_utf8_lossy(&o.stdout).starts_with("UAS "));
    }
    let o = biaffine(&["eval", "--gold", s(&dev), "--pred", s(&dev), "--include-punct"]);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("UAS 100.00  LAS 100.00"));

    // a model directory with a damaged blob is a data error
    let blob = model.join("params.bin");
    let mut bytes = std::fs::read(&blob).unwrap();
    bytes[0] ^= 1;
    std::fs::write(&blob, bytes).unwrap();
    let o = biaffine(&["parse", "--model", s(&model), "--input", s(&dev), "--output", s(&pred)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&biaffine(&["--help"])), 0);
    assert_eq!(code(&biaffine(&["--version"])), 0);
    assert_eq!(code(&biaffine(&[])), 1);
    assert_eq!(code(&biaffine(&["frobnicate"])), 1);
    assert_eq!(code(&biaffine(&["eval", "--gold", "x"])), 1);
    let missing = dir.path().join("missing.conll");
    assert_eq!(code(&biaffine(&["eval", "--gold", s(&missing), "--pred", s(&missing)])), 2);

    let data = synth(dir.path(), "d.conll", "5", "3");
    let out = dir.path().join("m");
    let bad_key = biaffine(&["train", "--train", s(&data), "--dev", s(&data), "--out", s(&out), "--set", "nonsense=1"]);
    assert_eq!(code(&bad_key), 1);
    let bad_value = biaffine(&["train", "--train", s(&data), "--dev", s(&data), "--out", s(&out), "--set", "cell=rnn"]);
    assert_eq!(code(&bad_value), 1);

    let broken = dir.path().join("broken.conll");
    std::fs::write(&broken, "1\tword\t_\tNN\tNN\t_\t5\tdep\t_\t_\n\n").unwrap();
    let o = biaffine(&["eval", "--gold", s(&broken), "--pred", s(&broken)]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));

    let diverge = biaffine(&[
        "train", "--train", s(&data), "--dev", s(&data), "--out", s(&out), "--set", "learning_rate=1e30", "--set",
        "lstm_size=8", "--set", "arc_mlp_size=8", "--set", "label_mlp_size=4", "--set", "max_steps=30", "--set",
        "batch_tokens=20",
    ]);
    assert_eq!(code(&diverge), 3, "{}", String::from_utf8_lossy(&diverge.stderr));
}

#[test]
fn gradcheck_command_passes() {
    let o = biaffine(&["gradcheck", "--seeds", "2"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("PASS"), "{out}");
}
