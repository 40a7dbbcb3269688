//! Option tables, config files and the flag > file > default resolution.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::str::FromStr;

use clap::parser::ValueSource;
use clap::{Arg, ArgAction, ArgMatches, Command};

use crate::CliError;

#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub default: Option<&'static str>,
    pub help: &'static str,
    /// A switch takes no value on the command line; files give `true`/`false`.
    pub switch: bool,
}

const fn key(name: &'static str, default: Option<&'static str>, help: &'static str) -> Key {
    Key { name, default, help, switch: false }
}

const fn switch(name: &'static str, help: &'static str) -> Key {
    Key { name, default: Some("false"), help, switch: true }
}

/// Keys that never change the numbers and stay out of the output header.
const UNECHOED: [&str; 2] = ["jobs", "out"];

pub const SEED: Key = key("seed", None, "master seed (falls back to CPFS_SEED, then 0)");
pub const JOBS: Key = key("jobs", Some("1"), "worker threads; results do not depend on it");
pub const OUT: Key = key("out", None, "output file (default: standard output)");
pub const LEVEL: Key = key("level", Some("0.99"), "confidence level");

const fn trials(default: &'static str) -> Key {
    key("trials", Some(default), "number of trials")
}

const OFFSPRING: Key = key("offspring", Some("det:2"), "offspring law: det:k, pois:mu, geom:p, pow:a[,cut], sexp:g[,cap]");
const FITNESS: Key = key("fitness", Some("const:1"), "fitness law: const:f, pareto:c1, unif:lo,hi");
const BUDGET: Key = key("budget", Some("5000"), "vertex budget per lazily grown tree");
const MAX_EVENTS: Key = key("max-events", Some("10000000"), "event cap per trial");
const LAMBDA: Key = key("lambda", Some("1"), "infection parameter");
const TREE: Key = key("tree", None, "tree file (cpfs-tree v1); otherwise trees are grown");

/// Surrogate constants of the bound comparisons, named as in `BoundParams`
/// with `_` written as `-`.
const CONSTANTS: [Key; 11] = [
    key("c", Some("4"), "surrogate constant c"),
    key("c-hat", Some("4"), "surrogate constant c_hat"),
    key("c-hat1", Some("4"), "surrogate constant c_hat1"),
    key("c2", Some("4"), "surrogate constant c2"),
    key("gamma", Some("4"), "surrogate constant gamma"),
    key("K", Some("4"), "surrogate constant K"),
    key("eps", Some("0.1"), "epsilon in (0, 1/2)"),
    key("eps1", Some("4"), "surrogate constant eps1"),
    key("eps2", Some("4"), "surrogate constant eps2"),
    key("delta", Some("4"), "surrogate constant delta"),
    key("m", Some("4"), "surrogate constant m"),
];

pub fn constant_names() -> impl Iterator<Item = &'static str> {
    CONSTANTS.iter().map(|k| k.name)
}

pub struct Spec {
    pub name: &'static str,
    pub about: &'static str,
    pub keys: Vec<Key>,
}

fn with(mut keys: Vec<Key>, common: &[Key]) -> Vec<Key> {
    keys.extend_from_slice(common);
    keys
}

pub fn specs() -> Vec<Spec> {
    let run = |t: &'static str| vec![SEED, trials(t), JOBS, LEVEL, OUT];
    vec![
        Spec {
            name: "gen-tree",
            about: "Generate a Galton-Watson tree with fitness and write it in cpfs-tree format",
            keys: vec![
                OFFSPRING,
                FITNESS,
                key("max-gen", Some("5"), "last generation to generate"),
                key("max-vertices", Some("1000000"), "vertex cap"),
                switch("extra-root", "attach the permanently infected extra root"),
                SEED,
                OUT,
            ],
        },
        Spec {
            name: "simulate",
            about: "Run the contact process and write one row per trial, or one trajectory",
            keys: with(
                vec![
                    TREE,
                    OFFSPRING,
                    FITNESS,
                    key("max-gen", None, "deepest generation of grown trees (default: unbounded)"),
                    BUDGET,
                    LAMBDA,
                    key("horizon", Some("inf"), "time horizon"),
                    MAX_EVENTS,
                    switch("extra-root", "permanently infected extra root above the root"),
                    switch("root-frozen", "root recovers only when alone"),
                    key("theta", None, "delay parameter in (0,1)"),
                    switch("trajectory", "write the event trajectory of trial 0 instead"),
                ],
                &run("1"),
            ),
        },
        Spec {
            name: "sweep",
            about: "Survival proportion at time T over a lambda grid, monotonically coupled",
            keys: with(
                vec![
                    OFFSPRING,
                    FITNESS,
                    BUDGET,
                    key("lambda", Some("0.1:0.1:1"), "grid start:step:end or a comma list"),
                    key("horizon", Some("50"), "time T"),
                    MAX_EVENTS,
                ],
                &run("1000"),
            ),
        },
        Spec {
            name: "depth-tail",
            about: "Tail of the maximal depth of one excursion with a permanent extra root",
            keys: with(
                vec![
                    TREE,
                    OFFSPRING,
                    FITNESS,
                    key("max-gen", Some("12"), "deepest generation of grown trees"),
                    BUDGET,
                    key("lambda", Some("0.2"), "infection parameter"),
                    key("h", Some("1:1:13"), "depth grid start:step:end or a comma list"),
                    MAX_EVENTS,
                ],
                &run("10000"),
            ),
        },
        Spec {
            name: "star",
            about: "Star gadget: level hitting and persistence of infected leaves",
            keys: with(
                vec![
                    LAMBDA,
                    key("f", Some("8"), "centre fitness"),
                    key("k", Some("512"), "number of leaves"),
                    key("experiment", Some("both"), "hitting, persistence or both"),
                    key("start", Some("level"), "persistence start: level or centre"),
                    key("cap", Some("1000"), "time cap on the persistence window"),
                    MAX_EVENTS,
                ],
                &[&CONSTANTS[..], &run("10000")].concat(),
            ),
        },
        Spec {
            name: "path",
            about: "Sequential relay along a path against the exact product",
            keys: with(
                vec![LAMBDA, key("path-fitness", Some("1,1,1,1"), "fitness of v_0..v_r, comma separated")],
                &[&CONSTANTS[..], &run("100000")].concat(),
            ),
        },
        Spec {
            name: "relay",
            about: "Star with a path: probability the path end is never infected",
            keys: with(
                vec![
                    LAMBDA,
                    key("f", Some("8"), "fitness of the centre and the path end"),
                    key("k", Some("64"), "number of leaves"),
                    key("r", Some("3"), "path length"),
                    key("cap", Some("200"), "time cap on the window"),
                    MAX_EVENTS,
                ],
                &[&CONSTANTS[..], &run("1000")].concat(),
            ),
        },
        Spec {
            name: "ychain",
            about: "Y-chain drift, burst mean, level time and the supermartingale check",
            keys: with(
                vec![
                    LAMBDA,
                    key("f", Some("16"), "centre fitness"),
                    key("k", Some("64"), "number of leaves"),
                    key("horizon", Some("100"), "time horizon per run"),
                ],
                &run("10000"),
            ),
        },
        Spec {
            name: "percolation",
            about: "Mean size of the root's component in the percolation graph at time t0",
            keys: with(
                vec![
                    OFFSPRING,
                    FITNESS,
                    key("max-gen", None, "deepest generation (default: unbounded)"),
                    BUDGET,
                    LAMBDA,
                    key("t0", Some("1"), "time t0"),
                ],
                &run("10000"),
            ),
        },
        Spec {
            name: "verify",
            about: "Exact-identity or coupling battery; exit 3 when a check fails",
            keys: with(
                vec![
                    key("suite", Some("exact"), "exact or coupling"),
                    key("instances", Some("100"), "random instances"),
                    key("max-vertices", Some("10"), "largest instance"),
                    key("horizon", Some("10"), "coupling horizon"),
                ],
                &[SEED, key("trials", Some("100"), "coupled trials per instance"), JOBS, OUT],
            ),
        },
        Spec {
            name: "good-vertices",
            about: "Mean number of good vertices per generation against the branching identity",
            keys: with(
                vec![
                    key("offspring", Some("pois:2"), OFFSPRING.help),
                    key("fitness", Some("pareto:2"), FITNESS.help),
                    key("f", Some("2"), "fitness threshold"),
                    key("k", Some("3"), "required number of children"),
                    key("generations", Some("6"), "generations 0..n-1 are counted"),
                    key("max-vertices", Some("1000000"), "vertex cap per tree"),
                ],
                &run("10000"),
            ),
        },
    ]
}

pub fn command() -> Command {
    let mut cmd = Command::new("cpfs")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Contact process on fitness-weighted trees")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for spec in specs() {
        let mut sub = Command::new(spec.name).about(spec.about).arg(
            Arg::new("config").long("config").value_name("FILE").help("key=value file; flags override it"),
        );
        for k in &spec.keys {
            let arg = Arg::new(k.name).long(k.name).help(k.help);
            sub = sub.arg(if k.switch {
                arg.action(ArgAction::SetTrue)
            } else {
                arg.value_name("VALUE").allow_hyphen_values(true)
            });
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

/// Parse a `key=value` config file. Keys may use `_` for `-`.
pub fn parse_config(text: &str, keys: &[Key]) -> Result<BTreeMap<&'static str, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Invalid(format!("config line {}: expected key=value, got `{line}`", i + 1)))?;
        let name = k.trim().replace('_', "-");
        let key = keys.iter().find(|key| key.name == name).ok_or_else(|| {
            let valid: Vec<&str> = keys.iter().map(|k| k.name).collect();
            CliError::Invalid(format!("config line {}: unknown key `{}`; valid keys: {}", i + 1, k.trim(), valid.join(", ")))
        })?;
        let v = v.trim();
        if v.is_empty() {
            return Err(CliError::Invalid(format!("config line {}: empty value for `{}`", i + 1, key.name)));
        }
        out.insert(key.name, v.to_string());
    }
    Ok(out)
}

/// Effective options of one run.
#[derive(Debug)]
pub struct Settings {
    pub command: &'static str,
    values: BTreeMap<&'static str, String>,
    explicit: BTreeSet<&'static str>,
}

impl Settings {
    pub fn resolve(spec: &Spec, m: &ArgMatches, env_seed: Option<String>) -> Result<Settings, CliError> {
        let file = match m.get_one::<String>("config") {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Invalid(format!("cannot read config {path}: {e}")))?;
                parse_config(&text, &spec.keys)?
            }
            None => BTreeMap::new(),
        };
        let mut values = BTreeMap::new();
        let mut explicit = BTreeSet::new();
        for k in &spec.keys {
            let flag = if k.switch {
                (m.value_source(k.name) == Some(ValueSource::CommandLine)).then(|| "true".to_string())
            } else {
                m.get_one::<String>(k.name).cloned()
            };
            let value = match (flag, file.get(k.name).cloned()) {
                (Some(v), _) | (None, Some(v)) => {
                    explicit.insert(k.name);
                    Some(v)
                }
                (None, None) if k.name == SEED.name => Some(env_seed.clone().unwrap_or_else(|| "0".into())),
                (None, None) => k.default.map(str::to_string),
            };
            if let Some(v) = value {
                values.insert(k.name, v);
            }
        }
        Ok(Settings { command: spec.name, values, explicit })
    }

    pub fn raw(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(String::as_str)
    }

    pub fn is_explicit(&self, name: &str) -> bool {
        self.explicit.contains(name)
    }

    pub fn opt<T: FromStr>(&self, name: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        self.raw(name)
            .map(|v| v.parse::<T>().map_err(|e| CliError::Invalid(format!("--{name} {v}: {e}"))))
            .transpose()
    }

    pub fn get<T: FromStr>(&self, name: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        self.opt(name)?.ok_or_else(|| CliError::Invalid(format!("--{name} is required")))
    }

    pub fn flag(&self, name: &str) -> Result<bool, CliError> {
        Ok(self.opt::<bool>(name)?.unwrap_or(false))
    }

    /// `key=value` pairs that determine the output, in key order.
    pub fn echo(&self) -> String {
        let parts: Vec<String> = self
            .values
            .iter()
            .filter(|(k, _)| !UNECHOED.contains(k))
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        parts.join(" ")
    }
}

/// `a:step:b` (inclusive, endpoints rounded to 1e-12) or `x,y,z`.
pub fn real_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Invalid(format!("bad grid `{s}`: expected start:step:end or a comma list"));
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [a, step, b] => {
            let (a, step, b): (f64, f64, f64) =
                (a.trim().parse().map_err(|_| bad())?, step.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            if !(step > 0.0 && b >= a && a.is_finite() && b.is_finite()) {
                return Err(bad());
            }
            let n = ((b - a) / step + 1e-9).floor() as usize + 1;
            Ok((0..n).map(|i| ((a + i as f64 * step) * 1e12).round() / 1e12).collect())
        }
        [_] => s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect(),
        _ => Err(bad()),
    }
}

/// Integer grid in the same syntax.
pub fn int_grid(s: &str) -> Result<Vec<i32>, CliError> {
    let bad = || CliError::Invalid(format!("bad integer grid `{s}`"));
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        [a, step, b] => {
            let (a, step, b): (i32, i32, i32) =
                (a.trim().parse().map_err(|_| bad())?, step.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            if step <= 0 || b < a {
                return Err(bad());
            }
            Ok((a..=b).step_by(step as usize).collect())
        }
        [_] => s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect(),
        _ => Err(bad()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(name: &str) -> Spec {
        specs().into_iter().find(|s| s.name == name).unwrap()
    }

    #[test]
    fn grids() {
        let g = real_grid("0.05:0.05:1.0").unwrap();
        assert_eq!(g.len(), 20);
        assert_eq!((g[0], g[2], g[19]), (0.05, 0.15, 1.0));
        assert_eq!(real_grid("0.5, 1,2").unwrap(), [0.5, 1.0, 2.0]);
        assert!(real_grid("1:0:2").is_err());
        assert_eq!(int_grid("1:2:7").unwrap(), [1, 3, 5, 7]);
        assert!(int_grid("a").is_err());
    }

    #[test]
    fn config_lines() {
        let keys = spec("sweep").keys;
        assert!(parse_config("", &keys).unwrap().is_empty());
        let m = parse_config("# note\n\ntrials = 500\nmax_events=10\n", &keys).unwrap();
        assert_eq!(m["trials"], "500");
        assert_eq!(m["max-events"], "10");
        match parse_config("trials=1\nbogus\n", &keys) {
            Err(CliError::Invalid(msg)) => assert!(msg.contains("line 2"), "{msg}"),
            other => panic!("{other:?}"),
        }
        match parse_config("zeta=1", &keys) {
            Err(CliError::Invalid(msg)) => assert!(msg.contains("valid keys") && msg.contains("horizon"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn flags_beat_file_beats_default() {
        let dir = std::env::temp_dir().join(format!("cpfs-settings-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.cfg");
        std::fs::write(&path, "trials=500\nhorizon=20\n").unwrap();
        let m = command()
            .try_get_matches_from(["cpfs", "sweep", "--config", path.to_str().unwrap(), "--trials", "1000"])
            .unwrap();
        let (_, sub) = m.subcommand().unwrap();
        let s = Settings::resolve(&spec("sweep"), sub, None).unwrap();
        assert_eq!(s.get::<u64>("trials").unwrap(), 1000);
        assert_eq!(s.get::<f64>("horizon").unwrap(), 20.0);
        assert_eq!(s.get::<u64>("budget").unwrap(), 5000);
        assert!(s.is_explicit("horizon") && !s.is_explicit("budget"));
        assert_eq!(s.get::<u64>("seed").unwrap(), 0);
        assert!(!s.echo().contains("jobs="));
    }

    #[test]
    fn env_seed_is_a_fallback() {
        let m = command().try_get_matches_from(["cpfs", "ychain"]).unwrap();
        let s = Settings::resolve(&spec("ychain"), m.subcommand().unwrap().1, Some("77".into())).unwrap();
        assert_eq!(s.get::<u64>("seed").unwrap(), 77);
        let m = command().try_get_matches_from(["cpfs", "ychain", "--seed", "5"]).unwrap();
        let s = Settings::resolve(&spec("ychain"), m.subcommand().unwrap().1, Some("77".into())).unwrap();
        assert_eq!(s.get::<u64>("seed").unwrap(), 5);
    }

    #[test]
    fn every_constant_is_known_to_the_core() {
        let mut p = cpfs_core::bounds::BoundParams::default();
        for name in constant_names() {
            p.set(&name.replace('-', "_"), 0.2).unwrap();
        }
    }
}
