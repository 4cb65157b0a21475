use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use datamech::audit::{run_suite, Suite};
use datamech::online::{benchmark_ci, benchmark_unbiased, ci_bound_rhs, unbiased_bound_rhs};
use datamech::report::{to_json, write_columns_csv, write_runs_csv};
use datamech::sim::{CostLaw, MonteCarloConfig};
use datamech::{
    alpha_gamma, gen_population, monte_carlo, myerson_payments, solve_ci, solve_unbiased, worst_case_variance,
    CiParameters, CostSet, Mechanism, Population, PopulationSpec, Record, Task,
};

#[derive(Parser)]
#[command(name = "datamech", version, about = "Budget-feasible data acquisition: solvers, simulator and audits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the known-costs rule for a cost list.
    Solve(Flags),
    /// Monte Carlo over random arrival orders of a population.
    Simulate(Flags),
    /// Benchmark optimum on the costs plus the cap.
    Benchmark(Flags),
    /// Run randomized property suites.
    Audit(Flags),
}

#[derive(Args, Default)]
struct Flags {
    /// unbiased or ci
    #[arg(long)]
    task: Option<String>,
    /// Comma-separated costs.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    costs: Option<Vec<f64>>,
    /// File with costs separated by commas or newlines; an optional header line is skipped.
    #[arg(long)]
    costs_file: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    budget: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Interval-objective weight; defaults to 2·alpha(gamma)/sqrt(m).
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    cap: Option<f64>,
    /// Population generator as inline JSON.
    #[arg(long)]
    population: Option<String>,
    /// Population size for generated populations.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Comma-separated audit suites (ironing, adjacency, truthfulness, oracle, convexity).
    #[arg(long, value_delimiter = ',')]
    suite: Option<Vec<String>>,
    #[arg(long)]
    instances: Option<usize>,
    /// Output file (solve, benchmark) or directory (simulate).
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON config; the fields it names override flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Merged flag and config settings; also the config file schema.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Settings {
    task: Option<Task>,
    costs: Option<Vec<f64>>,
    costs_file: Option<PathBuf>,
    budget: Option<f64>,
    gamma: Option<f64>,
    beta: Option<f64>,
    cap: Option<f64>,
    population: Option<PopulationSpec>,
    n: Option<usize>,
    runs: Option<usize>,
    seed: Option<u64>,
    threads: Option<usize>,
    suites: Option<Vec<String>>,
    instances: Option<usize>,
    out: Option<PathBuf>,
}

impl Settings {
    fn from_flags(f: Flags) -> Result<(Self, Option<PathBuf>)> {
        let task = f.task.map(|t| t.parse::<Task>()).transpose()?;
        let population = f
            .population
            .map(|p| serde_json::from_str(&p).context("--population is not a valid population spec"))
            .transpose()?;
        Ok((
            Settings {
                task,
                costs: f.costs,
                costs_file: f.costs_file,
                budget: f.budget,
                gamma: f.gamma,
                beta: f.beta,
                cap: f.cap,
                population,
                n: f.n,
                runs: f.runs,
                seed: f.seed,
                threads: f.threads,
                suites: f.suite,
                instances: f.instances,
                out: f.out,
            },
            f.config,
        ))
    }

    fn overlay(self, cfg: Settings) -> Settings {
        Settings {
            task: cfg.task.or(self.task),
            costs: cfg.costs.or(self.costs),
            costs_file: cfg.costs_file.or(self.costs_file),
            budget: cfg.budget.or(self.budget),
            gamma: cfg.gamma.or(self.gamma),
            beta: cfg.beta.or(self.beta),
            cap: cfg.cap.or(self.cap),
            population: cfg.population.or(self.population),
            n: cfg.n.or(self.n),
            runs: cfg.runs.or(self.runs),
            seed: cfg.seed.or(self.seed),
            threads: cfg.threads.or(self.threads),
            suites: cfg.suites.or(self.suites),
            instances: cfg.instances.or(self.instances),
            out: cfg.out.or(self.out),
        }
    }

    fn load(flags: Flags) -> Result<Settings> {
        let (settings, config) = Settings::from_flags(flags)?;
        let Some(path) = config else { return Ok(settings) };
        let text = fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Settings = serde_json::from_str(&text).map_err(|e| {
            anyhow!("config {}: line {}, column {}: {e}", path.display(), e.line(), e.column())
        })?;
        Ok(settings.overlay(cfg))
    }

    fn task(&self) -> Result<Task> {
        self.task.ok_or_else(|| anyhow!("--task is required (unbiased or ci)"))
    }

    fn budget(&self) -> Result<f64> {
        let b = self.budget.ok_or_else(|| anyhow!("--budget is required"))?;
        if !b.is_finite() || b < 0.0 {
            bail!("budget must be finite and non-negative, got {b}");
        }
        Ok(b)
    }

    fn gamma(&self) -> Result<f64> {
        let g = self.gamma.ok_or_else(|| anyhow!("--gamma is required for the ci task"))?;
        alpha_gamma(g)?;
        Ok(g)
    }

    fn costs(&self) -> Result<Option<Vec<f64>>> {
        let costs = match (&self.costs, &self.costs_file) {
            (Some(_), Some(_)) => bail!("give either --costs or --costs-file, not both"),
            (Some(c), None) => c.clone(),
            (None, Some(path)) => read_costs_file(path)?,
            (None, None) => return Ok(None),
        };
        if costs.is_empty() {
            bail!("cost list is empty");
        }
        for (i, c) in costs.iter().enumerate() {
            if !c.is_finite() || *c < 0.0 {
                bail!("cost #{} is {c}; costs must be finite and non-negative", i + 1);
            }
        }
        Ok(Some(costs))
    }

    fn required_costs(&self) -> Result<Vec<f64>> {
        self.costs()?.ok_or_else(|| anyhow!("--costs or --costs-file is required"))
    }

    fn cost_set(&self, costs: Vec<f64>) -> Result<CostSet> {
        let set = match self.cap {
            Some(cap) => CostSet::new(costs, cap)?,
            None => CostSet::from_costs(costs)?,
        };
        Ok(set)
    }
}

fn read_costs_file(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading costs file {}", path.display()))?;
    let mut costs = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).filter(|f| !f.is_empty()).collect();
        let parsed: Vec<std::result::Result<f64, _>> = fields.iter().map(|f| f.parse::<f64>()).collect();
        if ln == 0 && costs.is_empty() && parsed.iter().all(|p| p.is_err()) {
            continue;
        }
        for (fi, (p, raw)) in parsed.into_iter().zip(&fields).enumerate() {
            let v = p.map_err(|_| {
                anyhow!("{}: line {}, field {}: cannot parse {raw:?} as a number", path.display(), ln + 1, fi + 1)
            })?;
            costs.push(v);
        }
    }
    Ok(costs)
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn json_num(v: f64) -> serde_json::Value {
    serde_json::Number::from_f64(v).map_or(serde_json::Value::Null, serde_json::Value::Number)
}

fn cmd_solve(s: &Settings) -> Result<()> {
    let task = s.task()?;
    let set = s.cost_set(s.required_costs()?)?;
    let budget = s.budget()?;
    let m = set.len();
    let (output, columns): (serde_json::Value, Vec<(&str, Vec<f64>)>) = match task {
        Task::Unbiased => {
            if budget <= 0.0 {
                bail!("budget must be positive for the unbiased task");
            }
            let rule = solve_unbiased(&set, budget)?;
            let payments = myerson_payments(&set, &rule)?.payments;
            let variance = worst_case_variance(&rule, &set)?;
            let json = serde_json::json!({
                "task": task,
                "costs": set.costs(),
                "cap": set.cap(),
                "budget": budget,
                "allocation": rule.probabilities,
                "payments": payments,
                "lambda": rule.lambda,
                "saturated": rule.saturated,
                "objective": rule.inverse_sum(),
                "worst_case_variance": variance,
            });
            let cols = vec![
                ("cost", set.costs().to_vec()),
                ("allocation", rule.probabilities.clone()),
                ("payment", payments),
            ];
            (json, cols)
        }
        Task::Ci => {
            let beta = match s.beta {
                Some(b) => b,
                None => CiParameters::new(s.gamma()?, m)?.beta,
            };
            let sol = solve_ci(&set, budget, beta)?;
            let effective = sol.effective_allocation();
            let mech = Mechanism::from_allocation(set.clone(), effective.clone())?;
            let json = serde_json::json!({
                "task": task,
                "costs": set.costs(),
                "cap": set.cap(),
                "budget": budget,
                "beta": beta,
                "allocation": sol.allocation.probabilities,
                "ignore": sol.ignore.u_values,
                "effective_allocation": effective,
                "payments": mech.payments(),
                "lambda": sol.allocation.lambda,
                "threshold_phi": json_num(sol.ignore.threshold_phi),
                "boundary_fraction": sol.ignore.boundary_fraction,
                "mass": sol.mass(),
                "objective": sol.objective,
            });
            let cols = vec![
                ("cost", set.costs().to_vec()),
                ("allocation", sol.allocation.probabilities.clone()),
                ("ignore", sol.ignore.u_values.clone()),
                ("payment", mech.payments().to_vec()),
            ];
            (json, cols)
        }
    };
    let text = to_json(&output)?;
    print!("{text}");
    if let Some(out) = &s.out {
        if out.extension().is_some_and(|e| e == "csv") {
            let headers: Vec<&str> = columns.iter().map(|c| c.0).collect();
            let data: Vec<&[f64]> = columns.iter().map(|c| c.1.as_slice()).collect();
            let mut buf = Vec::new();
            write_columns_csv(&headers, &data, &mut buf)?;
            fs::write(out, buf).with_context(|| format!("writing {}", out.display()))?;
        } else {
            write_out(out, &text)?;
        }
    }
    Ok(())
}

fn population(s: &Settings) -> Result<Population> {
    if let Some(spec) = &s.population {
        let n = s.n.ok_or_else(|| anyhow!("--n is required with a population spec"))?;
        let cap = s.cap.ok_or_else(|| anyhow!("--cap is required with a population spec"))?;
        return Ok(gen_population(spec, n, cap, s.seed.unwrap_or(0))?);
    }
    if let Some(costs) = s.costs()? {
        // explicit costs with worst-case data
        let cap = s.cap.unwrap_or_else(|| costs.iter().copied().fold(0.0, f64::max));
        let records = costs.into_iter().map(|cost| Record { cost, datum: 1.0 }).collect();
        return Ok(Population::new(records, cap, "worst_case")?);
    }
    if let Some(n) = s.n {
        let cap = s.cap.unwrap_or(1.0);
        let spec = PopulationSpec::WorstCase { costs: CostLaw::Uniform { low: 0.0, high: cap } };
        return Ok(gen_population(&spec, n, cap, s.seed.unwrap_or(0))?);
    }
    bail!("give a population spec, --costs, or --n")
}

fn cmd_simulate(s: &Settings) -> Result<()> {
    let task = s.task()?;
    let budget = s.budget()?;
    let runs = s.runs.ok_or_else(|| anyhow!("--runs is required"))?;
    if runs == 0 {
        bail!("runs must be at least 1");
    }
    let gamma = match task {
        Task::Ci => Some(s.gamma()?),
        Task::Unbiased => None,
    };
    if task == Task::Unbiased && budget <= 0.0 {
        bail!("budget must be positive for the unbiased task");
    }
    let pop = population(s)?;
    let config = MonteCarloConfig {
        task,
        budget,
        gamma,
        runs,
        master_seed: s.seed.unwrap_or(0),
        threads: s.threads.unwrap_or(0),
    };
    let report = monte_carlo(&pop, &config)?;
    let metrics_json = to_json(&report.metrics)?;
    match &s.out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            write_out(&dir.join("metrics.json"), &metrics_json)?;
            let mut buf = Vec::new();
            write_runs_csv(&report.runs, &mut buf)?;
            fs::write(dir.join("runs.csv"), buf).context("writing runs.csv")?;
        }
        None => print!("{metrics_json}"),
    }
    let v = &report.metrics.verdicts;
    let line = |name: &str, ok: Option<bool>| {
        if let Some(ok) = ok {
            eprintln!("{name}: {}", if ok { "pass" } else { "FAIL" });
        }
    };
    line("budget", Some(v.budget));
    line("unbiased", v.unbiased);
    line("variance_bound", v.variance_bound);
    line("coverage", v.coverage);
    line("length_bound", v.length_bound);
    Ok(())
}

fn cmd_benchmark(s: &Settings) -> Result<()> {
    let task = s.task()?;
    let costs = s.required_costs()?;
    let cap = s.cap.unwrap_or_else(|| costs.iter().copied().fold(0.0, f64::max));
    let budget = s.budget()?;
    let n = costs.len();
    let output = match task {
        Task::Unbiased => {
            if budget <= 0.0 {
                bail!("budget must be positive for the unbiased task");
            }
            let b = benchmark_unbiased(&costs, cap, budget)?;
            serde_json::json!({
                "task": task,
                "grid": b.grid.costs(),
                "allocation": b.rule.probabilities,
                "var_star": b.var_star,
                "bound_rhs": unbiased_bound_rhs(n, &b),
            })
        }
        Task::Ci => {
            let b = benchmark_ci(&costs, cap, budget, s.gamma()?)?;
            serde_json::json!({
                "task": task,
                "grid": b.grid.costs(),
                "beta": b.params.beta,
                "allocation": b.solution.allocation.probabilities,
                "ignore": b.solution.ignore.u_values,
                "mass": b.solution.mass(),
                "l_star": b.l_star,
                "bound_rhs": ci_bound_rhs(n, &b),
            })
        }
    };
    let text = to_json(&output)?;
    print!("{text}");
    if let Some(out) = &s.out {
        write_out(out, &text)?;
    }
    Ok(())
}

/// `Ok(true)` when every selected suite passes.
fn cmd_audit(s: &Settings) -> Result<bool> {
    let names = s.suites.clone().unwrap_or_else(|| Suite::ALL.iter().map(|x| x.name().to_string()).collect());
    let suites: Vec<Suite> = names.iter().map(|n| n.parse::<Suite>()).collect::<datamech::Result<_>>()?;
    let seed = s.seed.unwrap_or(0);
    let mut all = true;
    let mut reports = Vec::new();
    for suite in suites {
        let report = run_suite(suite, s.instances.unwrap_or(suite.default_instances()), seed)?;
        for p in &report.properties {
            let verdict = if p.passed { "pass" } else { "FAIL" };
            println!("[{verdict}] {}: {} ({}/{} failed)", suite.name(), p.property, p.failures, p.checked);
            if let Some(d) = &p.detail {
                println!("       first failure: {d}");
            }
        }
        all &= report.passed();
        reports.push(report);
    }
    if let Some(out) = &s.out {
        write_out(out, &to_json(&reports)?)?;
    }
    Ok(all)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(f) => Settings::load(f).and_then(|s| cmd_solve(&s)).map(|_| true),
        Command::Simulate(f) => Settings::load(f).and_then(|s| cmd_simulate(&s)).map(|_| true),
        Command::Benchmark(f) => Settings::load(f).and_then(|s| cmd_benchmark(&s)).map(|_| true),
        Command::Audit(f) => Settings::load(f).and_then(|s| cmd_audit(&s)),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
