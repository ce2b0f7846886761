//! Experiment configuration: TOML file, command-line overrides, defaults and validation.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use noniid_qlearn::noniid::protocols::{dfe_num_paulis, dfe_repetitions, dfe_sampling_law, MAX_DFE_QUBITS};
use noniid_qlearn::noniid::wrapper::algorithm1_min_sites;
use noniid_qlearn::states::{MAX_DENSE_DIM, MAX_GHZ_QUBITS};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SubcommandId {
    DefinettiThm2,
    DefinettiGf,
    AppendixB,
    AppendixA,
    ShadowsBench,
    Verify,
    VerifyExpectation,
    Fidelity,
    Tomography,
    Mixedness,
    Coupon,
    Distortion,
}

impl SubcommandId {
    pub fn name(self) -> &'static str {
        match self {
            Self::DefinettiThm2 => "definetti-thm2",
            Self::DefinettiGf => "definetti-gf",
            Self::AppendixB => "appendix-b",
            Self::AppendixA => "appendix-a",
            Self::ShadowsBench => "shadows-bench",
            Self::Verify => "verify",
            Self::VerifyExpectation => "verify-expectation",
            Self::Fidelity => "fidelity",
            Self::Tomography => "tomography",
            Self::Mixedness => "mixedness",
            Self::Coupon => "coupon",
            Self::Distortion => "distortion",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum StateKind {
    Iid,
    BasisMixture,
    HaarMixture,
    Ghz,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
pub enum FamilyKind {
    #[serde(rename = "computational")]
    #[value(name = "computational")]
    Computational,
    #[serde(rename = "pauli3")]
    #[value(name = "pauli3")]
    Pauli3,
    #[serde(rename = "clifford1")]
    #[value(name = "clifford1")]
    Clifford1,
    #[serde(rename = "cliffordN")]
    #[value(name = "cliffordN")]
    CliffordN,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    /// `|0…0⟩`.
    Zero,
    /// `|+⟩^{⊗n}`.
    Plus,
    /// `(|0…0⟩ + |1…1⟩)/√2`.
    Ghz,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
}

/// Optional settings shared by the config file and the command line.
#[derive(Clone, Debug, Default, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Subcommand to run when none is given on the command line.
    #[arg(skip)]
    pub subcommand: Option<SubcommandId>,
    /// Master seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Monte Carlo trials [default: 1000].
    #[arg(long)]
    pub trials: Option<usize>,
    /// Number of sites [default: depends on the subcommand].
    #[arg(long = "N")]
    #[serde(rename = "N", alias = "n")]
    pub n: Option<usize>,
    /// Local dimension [default: 2].
    #[arg(long)]
    pub d: Option<usize>,
    /// Measured sites in the de Finetti estimators, snapshots in verify-expectation [default: 1].
    #[arg(long)]
    pub k: Option<usize>,
    /// Copies used by the i.i.d. learner [default: 16].
    #[arg(long = "kA")]
    #[serde(rename = "kA", alias = "k_a")]
    pub k_a: Option<usize>,
    /// Precision [default: 0.1].
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Target error probability [default: 0.1].
    #[arg(long)]
    pub delta: Option<f64>,
    /// Error probability of the wrapped i.i.d. learner [default: 0.05].
    #[arg(long = "delta-a")]
    pub delta_a: Option<f64>,
    /// Input state [default: basis-mixture].
    #[arg(long, value_enum)]
    pub state: Option<StateKind>,
    /// Measurement family [default: computational].
    #[arg(long, value_enum)]
    pub family: Option<FamilyKind>,
    /// Target pure state [default: zero].
    #[arg(long, value_enum)]
    pub target: Option<TargetKind>,
    /// Branches of the Haar mixture [default: 1000].
    #[arg(long)]
    pub branches: Option<usize>,
    /// Median-of-means groups [default: 1].
    #[arg(long)]
    pub groups: Option<usize>,
    /// appendix-b: measured sites l [default: 4].
    #[arg(long)]
    pub l: Option<usize>,
    /// appendix-b: Hamming weight of w [default: 2].
    #[arg(long)]
    pub w: Option<usize>,
    /// appendix-b: Gauss-Legendre nodes [default: 256].
    #[arg(long = "quad-points")]
    pub quad_points: Option<usize>,
    /// Output file [default: standard output].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format [default: csv].
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($f:ident),*) => {
        Settings { $($f: $top.$f.or($base.$f)),* }
    };
}

impl Settings {
    /// Values in `top` win.
    pub fn overlay(self, top: Settings) -> Settings {
        overlay!(
            self, top, subcommand, seed, trials, n, d, k, k_a, epsilon, delta, delta_a, state, family, target, branches,
            groups, l, w, quad_points, out, format
        )
    }
}

/// Reads a TOML config file; syntax and type errors carry a line and column.
pub fn load_config(path: &Path) -> CliResult<Settings> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text, &path.display().to_string())
}

pub fn parse_config(text: &str, origin: &str) -> CliResult<Settings> {
    toml::from_str(text).map_err(|e| {
        let start = e.span().map_or(0, |s| s.start).min(text.len());
        let before = &text[..start];
        let line = before.matches('\n').count() + 1;
        let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        CliError::Parse { path: origin.to_string(), line, column, message: e.message().to_string() }
    })
}

/// A fully resolved configuration; echoed in every result and hashed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub subcommand: SubcommandId,
    pub seed: u64,
    pub trials: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub d: usize,
    pub k: usize,
    #[serde(rename = "kA")]
    pub k_a: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub delta_a: f64,
    pub state: StateKind,
    pub family: FamilyKind,
    pub target: TargetKind,
    pub branches: usize,
    pub groups: usize,
    pub l: usize,
    pub w: usize,
    pub quad_points: usize,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    pub format: Format,
}

fn qubits(d: usize) -> Option<usize> {
    (d >= 2 && d.is_power_of_two()).then(|| d.trailing_zeros() as usize)
}

/// Largest device count a fidelity-estimation run can realize.
pub fn fidelity_max_devices(target: &noniid_qlearn::linalg::CVector, epsilon: f64, delta: f64) -> Option<usize> {
    let law = dfe_sampling_law(target).ok()?;
    let reps = law.iter().map(|t| dfe_repetitions(t.expectation, delta)).max()?;
    Some(dfe_num_paulis(epsilon, delta) * reps)
}

impl ExperimentConfig {
    /// Applies defaults, then checks every precondition and reports all violations at once.
    pub fn resolve(s: Settings) -> CliResult<Self> {
        let subcommand = s.subcommand.ok_or(CliError::MissingSubcommand)?;
        let mut cfg = Self {
            subcommand,
            seed: s.seed.unwrap_or(0),
            trials: s.trials.unwrap_or(1000),
            n: 0,
            d: s.d.unwrap_or(2),
            k: s.k.unwrap_or(1),
            k_a: s.k_a.unwrap_or(16),
            epsilon: s.epsilon.unwrap_or(0.1),
            delta: s.delta.unwrap_or(0.1),
            delta_a: s.delta_a.unwrap_or(0.05),
            state: s.state.unwrap_or(StateKind::BasisMixture),
            family: s.family.unwrap_or(FamilyKind::Computational),
            target: s.target.unwrap_or(TargetKind::Zero),
            branches: s.branches.unwrap_or(1000),
            groups: s.groups.unwrap_or(1),
            l: s.l.unwrap_or(4),
            w: s.w.unwrap_or(2),
            quad_points: s.quad_points.unwrap_or(256),
            out: s.out,
            format: s.format.unwrap_or(Format::Csv),
        };
        cfg.n = s.n.unwrap_or_else(|| cfg.default_sites());
        let violations = cfg.violations();
        if violations.is_empty() {
            Ok(cfg)
        } else {
            Err(CliError::Invalid(violations))
        }
    }

    fn wrapper_devices(&self) -> Option<usize> {
        match self.subcommand {
            SubcommandId::Verify | SubcommandId::Tomography | SubcommandId::Mixedness => Some(self.k_a),
            SubcommandId::Fidelity => {
                let target = crate::run::target_vector(self.target, self.d).ok()?;
                fidelity_max_devices(&target, self.epsilon, self.delta)
            }
            _ => None,
        }
    }

    fn default_sites(&self) -> usize {
        match self.subcommand {
            SubcommandId::AppendixA => 6,
            SubcommandId::VerifyExpectation => 2 * self.k + 2,
            _ => match self.wrapper_devices() {
                Some(k) if self.delta_a > 0.0 && self.delta_a < 1.0 && k > 0 => algorithm1_min_sites(k, self.delta_a),
                _ => 8,
            },
        }
    }

    /// Every precondition violated by this configuration.
    pub fn violations(&self) -> Vec<String> {
        use SubcommandId::*;
        let mut v = Vec::new();
        let sub = self.subcommand;
        let (n, d, k) = (self.n, self.d, self.k);
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if !matches!(sub, AppendixA | AppendixB) && self.trials == 0 {
            v.push("trials must be at least 1".into());
        }
        if d < 2 {
            v.push(format!("d must be at least 2, got {d}"));
        }
        match sub {
            DefinettiThm2 | DefinettiGf => {
                if k == 0 || 2 * k >= n {
                    v.push(format!(
                        "k must satisfy 1 <= k < N/2, the precondition of the randomized de Finetti bound; got k = {k}, N = {n}"
                    ));
                }
                self.check_state(&mut v);
                if sub == DefinettiThm2 {
                    self.check_family(&mut v);
                } else {
                    if qubits(d).is_none_or(|q| q > 3) {
                        v.push(format!("definetti-gf measures with tensor powers of pauli6 and needs d in {{2, 4, 8}}, got {d}"));
                    }
                    if d.checked_pow(k as u32).is_none_or(|x| x > MAX_DENSE_DIM) {
                        v.push(format!("d^k = {d}^{k} exceeds the dense limit {MAX_DENSE_DIM}"));
                    }
                }
            }
            AppendixB => {
                if self.l == 0 {
                    v.push("l must be at least 1".into());
                }
                if self.w > self.l {
                    v.push(format!("w must satisfy 0 <= w <= l, got w = {}, l = {}", self.w, self.l));
                }
                if k == 0 {
                    v.push("k must be at least 1".into());
                }
                if self.quad_points < 64 {
                    v.push(format!("quad-points must be at least 64, got {}", self.quad_points));
                }
            }
            AppendixA => {
                if n < 4 || n % 2 != 0 || n > noniid_qlearn::noniid::appendix_a::MAX_EXACT_N {
                    v.push(format!(
                        "N must be even with 4 <= N <= {}, got {n}",
                        noniid_qlearn::noniid::appendix_a::MAX_EXACT_N
                    ));
                }
                if !(self.epsilon >= 0.0) {
                    v.push(format!("epsilon must be nonnegative, got {}", self.epsilon));
                }
            }
            ShadowsBench => {
                if qubits(d).is_none_or(|q| q > 3) {
                    v.push(format!("shadows-bench uses global Clifford shadows and needs d in {{2, 4, 8}}, got {d}"));
                }
                self.check_groups(self.k_a, "kA", &mut v);
                if !unit(self.epsilon) {
                    v.push(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
                }
                if !unit(self.delta_a) {
                    v.push(format!("delta-a must lie in (0, 1), got {}", self.delta_a));
                }
            }
            Verify | Tomography | Mixedness | Fidelity => {
                if !unit(self.delta_a) {
                    v.push(format!("delta-a must lie in (0, 1), got {}", self.delta_a));
                }
                if !(self.epsilon > 0.0) {
                    v.push(format!("epsilon must be positive, got {}", self.epsilon));
                }
                match sub {
                    Verify => {
                        if qubits(d).is_none_or(|q| q > 3) {
                            v.push(format!("verify uses global Clifford shadows and needs d in {{2, 4, 8}}, got {d}"));
                        }
                        self.check_groups(self.k_a, "kA", &mut v);
                        self.check_target(&mut v);
                    }
                    Tomography | Mixedness if d != 2 => {
                        v.push(format!("{} measures pauli6 and needs d = 2, got {d}", sub.name()));
                    }
                    Fidelity => {
                        if !unit(self.delta) {
                            v.push(format!("delta must lie in (0, 1), got {}", self.delta));
                        }
                        if qubits(d).is_none_or(|q| q > MAX_DFE_QUBITS) {
                            v.push(format!("fidelity enumerates Paulis and needs d in {{2, 4}}, got {d}"));
                        }
                        self.check_target(&mut v);
                    }
                    _ => {}
                }
                if sub != Fidelity && self.k_a == 0 {
                    v.push("kA must be at least 1".into());
                }
                if let Some(devices) = self.wrapper_devices().filter(|_| unit(self.delta_a)) {
                    let need = algorithm1_min_sites(devices, self.delta_a);
                    if n < need {
                        v.push(format!(
                            "N = {n} is too small for the wrapper: {devices} devices with delta-a = {} need N >= {need}",
                            self.delta_a
                        ));
                    }
                }
                self.check_state(&mut v);
            }
            VerifyExpectation => {
                if qubits(d).is_none_or(|q| q > 3) {
                    v.push(format!("verify-expectation uses global Clifford shadows and needs d in {{2, 4, 8}}, got {d}"));
                }
                if k == 0 || 2 * k >= n {
                    v.push(format!("k must satisfy 1 <= k < N/2, got k = {k}, N = {n}"));
                }
                self.check_groups(k, "k", &mut v);
                if !unit(self.epsilon) {
                    v.push(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
                }
                self.check_target(&mut v);
                self.check_state(&mut v);
            }
            Coupon => {
                if self.k_a == 0 {
                    v.push("kA must be at least 1".into());
                }
                if !unit(self.delta_a) {
                    v.push(format!("delta-a must lie in (0, 1), got {}", self.delta_a));
                }
            }
            Distortion => {
                if qubits(d).is_none_or(|q| q > 2) {
                    v.push(format!("distortion measures tensor powers of pauli6 and needs d in {{2, 4}}, got {d}"));
                }
            }
        }
        v
    }

    fn check_groups(&self, samples: usize, name: &str, v: &mut Vec<String>) {
        if self.groups == 0 || self.groups > samples {
            v.push(format!("groups must satisfy 1 <= groups <= {name}, got groups = {}, {name} = {samples}", self.groups));
        }
    }

    fn check_target(&self, v: &mut Vec<String>) {
        if self.target == TargetKind::Ghz && qubits(self.d).is_none_or(|q| q < 2) {
            v.push(format!("target ghz needs at least two qubits per site, got d = {}", self.d));
        }
    }

    fn check_state(&self, v: &mut Vec<String>) {
        let (n, d) = (self.n, self.d);
        match self.state {
            StateKind::Ghz => {
                if d != 2 {
                    v.push(format!("state ghz needs d = 2, got {d}"));
                }
                if n > MAX_GHZ_QUBITS {
                    v.push(format!("state ghz is dense and supports N <= {MAX_GHZ_QUBITS}, got {n}"));
                }
            }
            StateKind::HaarMixture if self.branches == 0 => v.push("branches must be at least 1".into()),
            _ => {}
        }
    }

    fn check_family(&self, v: &mut Vec<String>) {
        let d = self.d;
        match self.family {
            FamilyKind::Pauli3 | FamilyKind::Clifford1 if d != 2 => {
                v.push(format!("family {:?} acts on qubits and needs d = 2, got {d}", self.family));
            }
            FamilyKind::CliffordN if qubits(d).is_none_or(|q| q > 3) => {
                v.push(format!("family cliffordN needs d in {{2, 4, 8}}, got {d}"));
            }
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(sub: SubcommandId) -> Settings {
        Settings { subcommand: Some(sub), ..Settings::default() }
    }

    #[test]
    fn empty_file_gives_defaults() {
        let s = parse_config("", "empty.toml").unwrap();
        let cfg = ExperimentConfig::resolve(Settings { subcommand: Some(SubcommandId::DefinettiThm2), ..s }).unwrap();
        assert_eq!((cfg.seed, cfg.trials, cfg.n, cfg.d, cfg.k), (0, 1000, 8, 2, 1));
        assert_eq!(cfg.format, Format::Csv);
    }

    #[test]
    fn flags_override_file_values() {
        let file = parse_config("seed = 3\ntrials = 50\nN = 16\n", "f.toml").unwrap();
        let flags = Settings { seed: Some(9), ..Settings::default() };
        let merged = file.overlay(flags);
        assert_eq!((merged.seed, merged.trials, merged.n), (Some(9), Some(50), Some(16)));
    }

    #[test]
    fn parse_errors_carry_line_and_column() {
        let err = parse_config("seed = 1\ntrials = \"many\"\n", "bad.toml").unwrap_err();
        let CliError::Parse { line, column, .. } = err else { panic!("{err}") };
        assert_eq!((line, column), (2, 10));
        assert!(matches!(parse_config("bogus = 1\n", "x.toml"), Err(CliError::Parse { line: 1, .. })));
    }

    #[test]
    fn large_k_names_the_de_finetti_precondition() {
        let s = Settings { k: Some(4), n: Some(8), ..settings(SubcommandId::DefinettiThm2) };
        let CliError::Invalid(v) = ExperimentConfig::resolve(s).unwrap_err() else { panic!() };
        assert!(v.iter().any(|m| m.contains("randomized de Finetti bound")), "{v:?}");
    }

    #[test]
    fn violations_are_listed_exhaustively() {
        let s = Settings {
            k: Some(9),
            n: Some(8),
            d: Some(3),
            trials: Some(0),
            family: Some(FamilyKind::Pauli3),
            ..settings(SubcommandId::DefinettiThm2)
        };
        let CliError::Invalid(v) = ExperimentConfig::resolve(s).unwrap_err() else { panic!() };
        assert_eq!(v.len(), 3, "{v:?}");
    }

    #[test]
    fn wrapper_sites_default_to_the_minimum() {
        let cfg = ExperimentConfig::resolve(settings(SubcommandId::Tomography)).unwrap();
        assert_eq!(cfg.n, algorithm1_min_sites(16, 0.05));
        let s = Settings { n: Some(20), ..settings(SubcommandId::Tomography) };
        assert!(ExperimentConfig::resolve(s).is_err());
    }
}
