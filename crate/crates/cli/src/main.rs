use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};
use serde::Deserialize;

use gatebench::cells::{count_params, param_budget_to_units, CellKind, GruVariant};
use gatebench::data::{save_pianoroll, save_signal_binary, save_signal_text, PianoRollDataset};
use gatebench::gradcheck::check_model_gradients;
use gatebench::harness::{
    emit_outputs, evaluate, generate_data, prepare_data, run_experiment_on, run_lr_search,
    ExperimentConfig, GeneratedData, CONFIG_KEYS,
};
use gatebench::heads::HeadKind;
use gatebench::model::{load_checkpoint, save_checkpoint, ModelShape, SequenceBatchItem, SequenceModel};
use gatebench::numerics::{RngStream, Vector};
use gatebench::{Error, Execution, Result};

fn key_help(key: &str) -> &'static str {
    match key {
        "task" => "lag | pianoroll | signal",
        "data" => "single data file, split by seed",
        "train-data" | "valid-data" | "test-data" => "pre-split data file",
        "dataset-name" => "label used in results and file names",
        "num-seq" => "generated sequences",
        "seq-len" => "generated sequence length",
        "lag" => "lag of the lag task",
        "dim" => "frame dimension of the lag task",
        "tones" => "sinusoids per synthetic signal",
        "cell" => "tanh | lstm | gru",
        "hidden" => "hidden units",
        "budget" => "parameter budget; picks the largest fitting hidden size",
        "gru-variant" => "candidate | projection",
        "seed" => "master seed",
        "lr" => "fixed learning rate, skips the search",
        "lr-candidates" => "learning rates tried by the search",
        "lr-log-lo" | "lr-log-hi" => "natural-log bounds of the learning-rate range",
        "search-epochs" => "epochs per search candidate",
        "full-search" => "train every candidate for max-epochs",
        "max-epochs" => "epoch limit",
        "patience" => "epochs without improvement before stopping",
        "noise-std" => "weight noise standard deviation",
        "clip" => "global gradient norm threshold",
        "rho" => "RMSProp decay",
        "rms-epsilon" => "RMSProp epsilon",
        "components" => "mixture components of the signal head",
        "in-len" | "out-len" => "signal window lengths",
        "stride" => "signal window stride (default out-len)",
        "init-scale" => "initial weight scale",
        "batch-size" => "sequences per update",
        "split" => "train,valid,test fractions",
        "run-name" => "overrides <dataset>_<cell>_s<seed>",
        _ => "",
    }
}

fn config_args() -> Vec<Arg> {
    let mut args = vec![Arg::new("config")
        .long("config")
        .value_name("FILE")
        .value_parser(value_parser!(PathBuf))
        .help("key=value configuration file; flags override it")];
    for &key in CONFIG_KEYS {
        let mut arg = Arg::new(key)
            .long(key)
            .value_name("VALUE")
            .help(key_help(key))
            .help_heading("Experiment");
        match key {
            "full-search" => arg = arg.num_args(0..=1).default_missing_value("true"),
            "hidden" => arg = arg.conflicts_with("budget"),
            _ => {}
        }
        args.push(arg);
    }
    args
}

fn load_config(m: &ArgMatches) -> Result<ExperimentConfig> {
    let mut config = match m.get_one::<PathBuf>("config") {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    // flags apply in command-line order
    let mut given: Vec<(usize, &str, &String)> = Vec::new();
    for &key in CONFIG_KEYS {
        if let (Some(values), Some(indices)) = (m.get_many::<String>(key), m.indices_of(key)) {
            given.extend(indices.zip(values).map(|(i, v)| (i, key, v)));
        }
    }
    given.sort_by_key(|g| g.0);
    for (_, key, value) in given {
        config.set(key, value)?;
    }
    config.validate()?;
    Ok(config)
}

fn exec_of(m: &ArgMatches) -> Execution {
    if m.get_flag("sequential") {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

fn sequential_arg() -> Arg {
    Arg::new("sequential")
        .long("sequential")
        .action(ArgAction::SetTrue)
        .help("disable data parallelism")
}

fn out_dir_arg() -> Arg {
    Arg::new("out-dir")
        .long("out-dir")
        .value_name("DIR")
        .default_value("out")
        .value_parser(value_parser!(PathBuf))
}

fn list_arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("LIST")
        .value_delimiter(',')
        .help(help)
}

fn cli() -> Command {
    Command::new("gatebench")
        .about("Train and compare tanh, LSTM and GRU sequence models")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            Command::new("train")
                .about("Learning-rate search, training and evaluation; writes results, curves and checkpoints")
                .args(config_args())
                .arg(list_arg("cells", "run each of these cells (overrides --cell)"))
                .arg(list_arg("seeds", "run each of these seeds (overrides --seed)"))
                .arg(out_dir_arg())
                .arg(sequential_arg()),
        )
        .subcommand(
            Command::new("eval")
                .about("Per-step NLL of a checkpoint on the configured data")
                .args(config_args())
                .arg(
                    Arg::new("checkpoint")
                        .long("checkpoint")
                        .value_name("FILE")
                        .required(true)
                        .value_parser(value_parser!(PathBuf)),
                )
                .arg(
                    Arg::new("on")
                        .long("on")
                        .value_parser(["train", "valid", "test", "all"])
                        .default_value("all")
                        .help("which split to evaluate"),
                )
                .arg(sequential_arg()),
        )
        .subcommand(
            Command::new("lr-search")
                .about("Run only the learning-rate search and list the candidates")
                .args(config_args())
                .arg(sequential_arg()),
        )
        .subcommand(
            Command::new("gradcheck")
                .about("Compare BPTT against central finite differences on random instances")
                .arg(Arg::new("cell").long("cell").default_value("gru"))
                .arg(
                    Arg::new("head")
                        .long("head")
                        .value_parser(["bernoulli", "gmm"])
                        .default_value("bernoulli"),
                )
                .arg(num_arg("components", "3"))
                .arg(Arg::new("gru-variant").long("gru-variant").default_value("candidate"))
                .arg(num_arg("hidden", "5"))
                .arg(num_arg("dim", "3"))
                .arg(num_arg("steps", "4"))
                .arg(num_arg("seeds", "1").help("instances to check, seeds 0..N"))
                .arg(float_arg("epsilon", "1e-5"))
                .arg(float_arg("tol", "1e-5").help("relative tolerance"))
                .arg(
                    float_arg("atol", "0")
                        .help("absolute allowance for finite-difference roundoff; 0 checks the relative error alone"),
                ),
        )
        .subcommand(
            Command::new("count-params")
                .about("Parameter count of a cell, or the hidden size fitting a budget")
                .arg(Arg::new("cell").long("cell").help("default: all three"))
                .arg(
                    Arg::new("hidden")
                        .long("hidden")
                        .value_parser(value_parser!(usize))
                        .conflicts_with("budget"),
                )
                .arg(Arg::new("budget").long("budget").value_parser(value_parser!(usize)))
                .arg(
                    Arg::new("dim")
                        .long("dim")
                        .required(true)
                        .value_parser(value_parser!(usize)),
                ),
        )
        .subcommand(
            Command::new("gen-data")
                .about("Write the generated lag or signal dataset to a file")
                .args(config_args())
                .arg(
                    Arg::new("out")
                        .long("out")
                        .value_name("FILE")
                        .required(true)
                        .value_parser(value_parser!(PathBuf)),
                )
                .arg(
                    Arg::new("format")
                        .long("format")
                        .value_parser(["text", "binary"])
                        .default_value("text")
                        .help("signal only"),
                ),
        )
        .subcommand(
            Command::new("convert-pianoroll")
                .about("Convert a JSON piano-roll corpus into train/valid/test pianoroll files")
                .arg(
                    Arg::new("input")
                        .long("input")
                        .value_name("JSON")
                        .required(true)
                        .value_parser(value_parser!(PathBuf)),
                )
                .arg(out_dir_arg())
                .arg(num_arg("dim", "88"))
                .arg(num_arg("min-note", "21").help("note number stored as index 0")),
        )
}

fn num_arg(name: &'static str, default: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .default_value(default)
        .value_parser(value_parser!(usize))
}

fn float_arg(name: &'static str, default: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .default_value(default)
        .value_parser(value_parser!(f64))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn cmd_train(m: &ArgMatches) -> Result<()> {
    let base = load_config(m)?;
    let out_dir = m.get_one::<PathBuf>("out-dir").expect("defaulted");
    let cells: Vec<CellKind> = match m.get_many::<String>("cells") {
        Some(v) => v.map(|s| s.parse()).collect::<Result<_>>()?,
        None => vec![base.cell],
    };
    let seeds: Vec<u64> = match m.get_many::<String>("seeds") {
        Some(v) => v
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("seeds: cannot parse {s:?}")))
            })
            .collect::<Result<_>>()?,
        None => vec![base.seed],
    };
    std::fs::create_dir_all(out_dir).map_err(|e| Error::Io {
        path: out_dir.clone(),
        source: e,
    })?;

    let exec = exec_of(m);
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    let mut diverged = Vec::new();
    for &seed in &seeds {
        let mut seeded = base.clone();
        seeded.seed = seed;
        // data and splits depend on the seed only, so cells share them
        let data = prepare_data(&seeded)?;
        for &cell in &cells {
            let mut config = seeded.clone();
            config.cell = cell;
            let out = run_experiment_on(&config, &data, exec)?;
            eprintln!(
                "{}: lr {:.4e}, {} epochs, valid {:.6}, test {:.6}",
                out.run,
                out.row.best_lr,
                out.curve.len(),
                out.row.valid_nll,
                out.row.test_nll
            );
            if let Some(msg) = &out.diverged {
                diverged.push(format!("{}: {msg}", out.run));
            }
            save_checkpoint(&out.model, out_dir.join(format!("{}.ckpt", out.run)))?;
            write_file(&out_dir.join(format!("config_{}.txt", out.run)), &config.to_kv_text())?;
            rows.push(out.row);
            curves.push((out.run, out.curve));
        }
    }
    emit_outputs(&rows, &curves, out_dir)?;
    print!("{}", gatebench::harness::format_table(&rows));
    if diverged.is_empty() {
        Ok(())
    } else {
        Err(Error::Divergence(format!(
            "training stopped early; best checkpoints were kept ({})",
            diverged.join("; ")
        )))
    }
}

fn cmd_eval(m: &ArgMatches) -> Result<()> {
    let config = load_config(m)?;
    let model = load_checkpoint(m.get_one::<PathBuf>("checkpoint").expect("required"))?;
    let data = prepare_data(&config)?;
    let exec = exec_of(m);
    let which = m.get_one::<String>("on").expect("defaulted").as_str();
    let splits: [(&str, &[SequenceBatchItem]); 3] = [("train", &data.train), ("valid", &data.valid), ("test", &data.test)];
    for (name, items) in splits {
        if which == "all" || which == name {
            println!("{name}\t{}", evaluate(&model, items, exec)?);
        }
    }
    Ok(())
}

fn cmd_lr_search(m: &ArgMatches) -> Result<()> {
    let config = load_config(m)?;
    let data = prepare_data(&config)?;
    let search = run_lr_search(&config, &data, exec_of(m))?;
    println!("index\tlr\tbest_valid\tepochs");
    for c in &search.candidates {
        let mark = if c.index == search.best_index { "\t*" } else { "" };
        println!("{}\t{:.6e}\t{}\t{}{mark}", c.index, c.lr, c.best_valid, c.epochs_run);
    }
    Ok(())
}

fn cmd_gradcheck(m: &ArgMatches) -> Result<()> {
    let kind: CellKind = m.get_one::<String>("cell").expect("defaulted").parse()?;
    let variant: GruVariant = m.get_one::<String>("gru-variant").expect("defaulted").parse()?;
    let head = match m.get_one::<String>("head").expect("defaulted").as_str() {
        "gmm" => HeadKind::Gmm {
            components: *m.get_one("components").expect("defaulted"),
        },
        _ => HeadKind::Bernoulli,
    };
    let hidden: usize = *m.get_one("hidden").expect("defaulted");
    let dim: usize = *m.get_one("dim").expect("defaulted");
    let steps: usize = *m.get_one("steps").expect("defaulted");
    let seeds: usize = *m.get_one("seeds").expect("defaulted");
    let epsilon: f64 = *m.get_one("epsilon").expect("defaulted");
    let tol: f64 = *m.get_one("tol").expect("defaulted");
    let atol: f64 = *m.get_one("atol").expect("defaulted");
    if steps == 0 {
        return Err(Error::Config("steps must be >= 1".into()));
    }
    let shape = ModelShape {
        kind,
        head,
        hidden,
        d_in: dim,
        d_out: dim,
        gru_variant: variant,
    };
    let mut failures = 0;
    for seed in 0..seeds as u64 {
        let mut rng = RngStream::new(seed);
        let model = SequenceModel::new(shape, &mut rng, 1.0)?;
        let inputs: Vec<Vector> = (0..steps)
            .map(|_| (0..dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect())
            .collect();
        let targets: Vec<Vector> = (0..steps)
            .map(|_| match head {
                HeadKind::Bernoulli => (0..dim).map(|_| f64::from(u8::from(rng.bernoulli(0.5)))).collect(),
                HeadKind::Gmm { .. } => (0..dim).map(|_| rng.standard_normal()).collect(),
            })
            .collect();
        let item = SequenceBatchItem::new(inputs, targets)?;
        let report = check_model_gradients(&model, &item, epsilon)?;
        let ok = if atol > 0.0 {
            report.violations(tol, atol) == 0
        } else {
            report.passes(tol)
        };
        failures += usize::from(!ok);
        println!(
            "seed {seed}: {} max_rel_error {:.3e} at {}[{}] (analytic {:.6e}, numeric {:.6e}), {} entries",
            if ok { "ok" } else { "FAIL" },
            report.max_rel_error,
            report.worst_parameter.0,
            report.worst_parameter.1,
            report.worst_analytic,
            report.worst_numeric,
            report.num_checked
        );
    }
    if failures > 0 {
        return Err(Error::Oracle(format!("{failures} of {seeds} instances outside tolerance")));
    }
    Ok(())
}

fn cmd_count_params(m: &ArgMatches) -> Result<()> {
    let dim: usize = *m.get_one("dim").expect("required");
    let kinds: Vec<CellKind> = match m.get_one::<String>("cell") {
        Some(s) => vec![s.parse()?],
        None => CellKind::ALL.to_vec(),
    };
    let hidden = m.get_one::<usize>("hidden").copied();
    let budget = m.get_one::<usize>("budget").copied();
    if hidden.is_none() && budget.is_none() {
        return Err(Error::Config("give --hidden or --budget".into()));
    }
    println!("cell\tn\tparams");
    for kind in kinds {
        let n = match (hidden, budget) {
            (Some(n), _) => n,
            (None, Some(b)) => param_budget_to_units(kind, dim, b)?,
            (None, None) => unreachable!(),
        };
        println!("{kind}\t{n}\t{}", count_params(kind, n, dim));
    }
    Ok(())
}

fn cmd_gen_data(m: &ArgMatches) -> Result<()> {
    let config = load_config(m)?;
    let out = m.get_one::<PathBuf>("out").expect("required");
    match generate_data(&config)? {
        GeneratedData::PianoRoll(ds) => save_pianoroll(&ds, out)?,
        GeneratedData::Signal(ds) => match m.get_one::<String>("format").expect("defaulted").as_str() {
            "binary" => save_signal_binary(&ds, out)?,
            _ => save_signal_text(&ds, out)?,
        },
    }
    eprintln!("wrote {}", out.display());
    Ok(())
}

/// Split name to sequences of steps, each a list of note numbers.
#[derive(Deserialize)]
struct NoteCorpus(BTreeMap<String, Vec<Vec<Vec<i64>>>>);

fn cmd_convert_pianoroll(m: &ArgMatches) -> Result<()> {
    let input = m.get_one::<PathBuf>("input").expect("required");
    let out_dir = m.get_one::<PathBuf>("out-dir").expect("defaulted");
    let dim: usize = *m.get_one("dim").expect("defaulted");
    let min_note = *m.get_one::<usize>("min-note").expect("defaulted") as i64;
    let text = std::fs::read_to_string(input).map_err(|e| Error::Io {
        path: input.clone(),
        source: e,
    })?;
    let NoteCorpus(corpus) =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", input.display())))?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::Io {
        path: out_dir.clone(),
        source: e,
    })?;
    for split in ["train", "valid", "test"] {
        let Some(sequences) = corpus.get(split) else {
            return Err(Error::Data(format!("{}: missing \"{split}\" split", input.display())));
        };
        let mut converted = Vec::with_capacity(sequences.len());
        for (s, seq) in sequences.iter().enumerate() {
            let mut steps = Vec::with_capacity(seq.len());
            for (t, notes) in seq.iter().enumerate() {
                let mut step = Vec::with_capacity(notes.len());
                for &note in notes {
                    let index = note - min_note;
                    if index < 0 || index >= dim as i64 {
                        return Err(Error::Data(format!(
                            "{split} sequence {s} step {t}: note {note} outside [{min_note}, {})",
                            min_note + dim as i64
                        )));
                    }
                    step.push(index as usize);
                }
                steps.push(step);
            }
            converted.push(steps);
        }
        let ds = PianoRollDataset::new(dim, converted)?;
        let path = out_dir.join(format!("{split}.pianoroll"));
        save_pianoroll(&ds, &path)?;
        eprintln!("wrote {} ({} sequences)", path.display(), ds.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    let result = match matches.subcommand() {
        Some(("train", m)) => cmd_train(m),
        Some(("eval", m)) => cmd_eval(m),
        Some(("lr-search", m)) => cmd_lr_search(m),
        Some(("gradcheck", m)) => cmd_gradcheck(m),
        Some(("count-params", m)) => cmd_count_params(m),
        Some(("gen-data", m)) => cmd_gen_data(m),
        Some(("convert-pianoroll", m)) => cmd_convert_pianoroll(m),
        _ => unreachable!("subcommand required"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
