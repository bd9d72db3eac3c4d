//! The four subcommands. Exit codes: 0 success, 1 failed verification
//! checks, 2 configuration or input-consistency errors, 3 runtime failures
//! (partial outputs are kept), 4 exact-enumeration cap exceeded.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use gbdp_core::{
    check_concave_extensible, check_submodular_all, exact_solve, simulate, terminal_handle,
    train_with, verify_upper_bound, AhdProblem, ExactValueTable, OracleError, ProblemDefinition,
    ResampleMode, StateVec, ValueStack,
};
use serde_json::json;

use crate::config::RunConfig;
use crate::output::{
    fmt_f64, mean_and_sd, write_histogram, write_json, write_profits, TraceWriter,
};

pub struct CommonArgs {
    pub config_path: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

fn load(common: &CommonArgs) -> Result<(RunConfig, AhdProblem, PathBuf)> {
    let mut config = RunConfig::load(&common.config_path)?;
    if let Some(seed) = common.seed {
        config.solver.seed = seed;
    }
    let out_dir = common
        .out
        .clone()
        .unwrap_or_else(|| config.output_dir.clone());
    let problem = config.build_problem()?;
    Ok((config, problem, out_dir))
}

fn load_checkpoint(
    path: &Path,
    problem: &AhdProblem,
) -> Result<ValueStack> {
    let file =
        File::open(path).with_context(|| format!("cannot open checkpoint {}", path.display()))?;
    ValueStack::read_checkpoint(
        BufReader::new(file),
        problem.space().n(),
        problem.t_bar(),
        terminal_handle(problem),
    )
    .with_context(|| format!("checkpoint {} does not match the config", path.display()))
}

fn load_exact(path: &Path, problem: &AhdProblem) -> Result<ExactValueTable> {
    let file =
        File::open(path).with_context(|| format!("cannot open value table {}", path.display()))?;
    let table = ExactValueTable::read_from(BufReader::new(file))
        .with_context(|| format!("cannot parse value table {}", path.display()))?;
    if table.space() != problem.space() || table.t_bar() != problem.t_bar() {
        return Err(anyhow!(
            "value table {} does not match the config (n = {}, t_bar = {})",
            path.display(),
            problem.space().n(),
            problem.t_bar()
        ));
    }
    Ok(table)
}

pub fn cmd_train(common: CommonArgs) -> u8 {
    let (config, problem, out_dir) = match load(&common) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return 2;
        }
    };

    let exact = if config.solver.resample_mode == ResampleMode::OracleAssisted {
        match exact_solve(&problem, 10_000_000) {
            Ok(table) => Some(table),
            Err(e) => {
                eprintln!("cannot build the exact table required by resampling: {e}");
                return 3;
            }
        }
    } else {
        None
    };

    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("cannot create output directory {}: {e}", out_dir.display());
        return 3;
    }
    let mut trace_writer = match TraceWriter::create(&out_dir.join("trace.csv")) {
        Ok(w) => w,
        Err(e) => {
            eprintln!("{e:#}");
            return 3;
        }
    };

    let run_start = Instant::now();
    let mut last_tick = Instant::now();
    let mut io_error: Option<anyhow::Error> = None;
    let result = train_with(&problem, &config.solver, exact.as_ref(), |record, _stack| {
        let wall_ms = last_tick.elapsed().as_millis();
        last_tick = Instant::now();
        if io_error.is_none() {
            if let Err(e) = trace_writer.write_row(record, wall_ms) {
                io_error = Some(e);
            }
        }
    });
    let total_wall_ms = run_start.elapsed().as_millis();

    let output = match result {
        Ok(output) => output,
        Err(e) => {
            eprintln!("training failed: {e} (partial trace retained)");
            return 3;
        }
    };
    if let Some(e) = io_error {
        eprintln!("trace write failed: {e:#}");
        return 3;
    }

    let checkpoint_path = out_dir.join("cuts.jsonl");
    let write_outputs = || -> Result<()> {
        let file = File::create(&checkpoint_path)
            .with_context(|| format!("cannot create {}", checkpoint_path.display()))?;
        output.stack.write_checkpoint(BufWriter::new(file))?;

        let lowers: Vec<f64> = output.trace.iter().map(|r| r.lower_sample).collect();
        let (mean_l, sd_l) = mean_and_sd(&lowers);
        let final_u = output.trace.last().map(|r| r.upper_bound);
        write_json(
            &out_dir.join("summary.json"),
            &json!({
                "final_u": final_u,
                "mean_l": mean_l,
                "sd_l": sd_l,
                "iters": output.trace.len(),
                "total_wall_ms": total_wall_ms as u64,
            }),
        )
    };
    if let Err(e) = write_outputs() {
        eprintln!("{e:#}");
        return 3;
    }

    let last = output.trace.last().expect("i_max >= 1");
    println!(
        "trained {} iterations in {} ms: u = {}, cumulative mean l = {}",
        last.iter,
        total_wall_ms,
        fmt_f64(last.upper_bound),
        fmt_f64(last.cum_avg_lower)
    );
    0
}

pub struct SimulateArgs {
    pub common: CommonArgs,
    pub checkpoint: Option<PathBuf>,
    pub replications: Option<usize>,
}

pub fn cmd_simulate(args: SimulateArgs) -> u8 {
    let (config, problem, out_dir) = match load(&args.common) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return 2;
        }
    };
    let checkpoint_path = args
        .checkpoint
        .unwrap_or_else(|| out_dir.join("cuts.jsonl"));
    let stack = match load_checkpoint(&checkpoint_path, &problem) {
        Ok(stack) => stack,
        Err(e) => {
            eprintln!("checkpoint error: {e:#}");
            return 2;
        }
    };
    let n = args.replications.unwrap_or(config.replications);

    let profits = match simulate(&problem, &stack, n, config.solver.seed) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("simulation failed: {e}");
            return 3;
        }
    };

    let write_outputs = || -> Result<()> {
        std::fs::create_dir_all(&out_dir)?;
        write_profits(&out_dir.join("profits.csv"), &profits)?;
        write_histogram(&out_dir.join("histogram.csv"), &profits)?;
        let (mean, sd) = mean_and_sd(&profits);
        write_json(
            &out_dir.join("summary.json"),
            &json!({
                "mean": mean,
                "sd": sd,
                "replications": profits.len(),
            }),
        )
    };
    if let Err(e) = write_outputs() {
        eprintln!("{e:#}");
        return 3;
    }
    let (mean, sd) = mean_and_sd(&profits);
    println!(
        "simulated {} booking periods: mean profit = {}, sd = {}",
        profits.len(),
        mean.map_or("n/a".into(), fmt_f64),
        sd.map_or("n/a".into(), fmt_f64)
    );
    0
}

pub struct ExactArgs {
    pub common: CommonArgs,
    pub cap: u64,
}

pub fn cmd_exact(args: ExactArgs) -> u8 {
    let (_config, problem, out_dir) = match load(&args.common) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return 2;
        }
    };
    let table = match exact_solve(&problem, args.cap) {
        Ok(table) => table,
        Err(e @ OracleError::CapExceeded { .. }) => {
            eprintln!("{e}");
            return 4;
        }
        Err(e) => {
            eprintln!("exact solve failed: {e}");
            return 3;
        }
    };
    let write_output = || -> Result<()> {
        std::fs::create_dir_all(&out_dir)?;
        let path = out_dir.join("exact_values.bin");
        let file =
            File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        table.write_to(BufWriter::new(file))?;
        Ok(())
    };
    if let Err(e) = write_output() {
        eprintln!("{e:#}");
        return 3;
    }
    println!("V_1(0) = {}", fmt_f64(table.value_at_origin()));
    0
}

pub struct VerifyArgs {
    pub common: CommonArgs,
    pub checkpoint: Option<PathBuf>,
    pub exact: Option<PathBuf>,
}

pub fn cmd_verify(args: VerifyArgs) -> u8 {
    let (config, problem, out_dir) = match load(&args.common) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return 2;
        }
    };
    let checkpoint_path = args
        .checkpoint
        .unwrap_or_else(|| out_dir.join("cuts.jsonl"));
    let exact_path = args
        .exact
        .unwrap_or_else(|| out_dir.join("exact_values.bin"));
    let (stack, table) = match load_checkpoint(&checkpoint_path, &problem)
        .and_then(|stack| Ok((stack, load_exact(&exact_path, &problem)?)))
    {
        Ok(v) => v,
        Err(e) => {
            eprintln!("verify input error: {e:#}");
            return 2;
        }
    };

    let report = verify_upper_bound(&stack, &table);
    let tolerance = problem.t_bar() as f64 * config.solver.eps_opt + 1e-8;
    let prop1_pass = report.worst_gap >= -tolerance;
    if !prop1_pass {
        eprintln!(
            "upper-bound property violated: gap {} at t = {}, x = {:?} (Q = {}, V = {})",
            fmt_f64(report.worst_gap),
            report.at_t,
            report.at_state,
            fmt_f64(report.q_value),
            fmt_f64(report.v_value)
        );
    }

    // Empirical audit of the structural assumptions on the exact values:
    // every layer (terminal included) must be submodular and concave
    // extensible for the bound guarantees to apply.
    let space = problem.space();
    let mut submodular_all_t = true;
    let mut concave_extensible_all_t = true;
    for t in 1..=problem.t_bar() + 1 {
        match check_submodular_all(|x| table.value(t, x), space) {
            Ok(check) => submodular_all_t &= check.holds,
            Err(e) => {
                eprintln!("verification is desk-scale only: {e}");
                return 2;
            }
        }
        match check_concave_extensible(&|x: &StateVec| table.value(t, x), space) {
            Ok(ok) => concave_extensible_all_t &= ok,
            Err(e) => {
                eprintln!("verification is desk-scale only: {e}");
                return 2;
            }
        }
    }
    let converged = stack.origin_bound() - table.value_at_origin() <= 1e-6;

    let verdict = json!({
        "prop1_worst_gap": report.worst_gap,
        "prop1_pass": prop1_pass,
        "argmin_state": report.at_state.entries(),
        "argmin_t": report.at_t,
        "submodular_all_t": submodular_all_t,
        "concave_extensible_all_t": concave_extensible_all_t,
        "converged": converged,
    });
    let pretty = serde_json::to_string_pretty(&verdict).expect("serializable");
    println!("{pretty}");
    if let Err(e) = std::fs::create_dir_all(&out_dir)
        .map_err(anyhow::Error::from)
        .and_then(|_| write_json(&out_dir.join("verify.json"), &verdict))
    {
        eprintln!("{e:#}");
        return 3;
    }
    if prop1_pass && submodular_all_t && concave_extensible_all_t && converged {
        0
    } else {
        1
    }
}
