//! Key registry and layered resolution: defaults, then the config file,
//! then command-line flags.

use std::str::FromStr;

use elrecon::kv::KvMap;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmd {
    Phantom,
    Simulate,
    Reconstruct,
    Sweep,
    Report,
    Verify,
}

impl Cmd {
    pub const ALL: [Cmd; 6] = [
        Cmd::Phantom,
        Cmd::Simulate,
        Cmd::Reconstruct,
        Cmd::Sweep,
        Cmd::Report,
        Cmd::Verify,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Cmd::Phantom => "phantom",
            Cmd::Simulate => "simulate",
            Cmd::Reconstruct => "reconstruct",
            Cmd::Sweep => "sweep",
            Cmd::Report => "report",
            Cmd::Verify => "verify",
        }
    }

    pub fn about(self) -> &'static str {
        match self {
            Cmd::Phantom => "Render a phantom image (and its region masks)",
            Cmd::Simulate => "Simulate a transmission or emission dataset",
            Cmd::Reconstruct => "Reconstruct one realization of a dataset",
            Cmd::Sweep => "Sweep one penalty parameter and score each value",
            Cmd::Report => "Run the full method comparison and write the report",
            Cmd::Verify => "Run the built-in correctness suites",
        }
    }

    pub fn parse(s: &str) -> CliResult<Cmd> {
        Cmd::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| CliError::config(format!("unknown command {s:?}")))
    }
}

use Cmd::*;

const RECON: &[Cmd] = &[Reconstruct, Sweep, Report];
const DATA: &[Cmd] = &[Reconstruct, Sweep, Report];

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    /// Commands reading the key; empty for global keys.
    pub cmds: &'static [Cmd],
    pub boolean: bool,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, cmds: &'static [Cmd], help: &'static str) -> Key {
    Key {
        name,
        default,
        cmds,
        boolean: false,
        help,
    }
}

const fn flag(name: &'static str, default: &'static str, cmds: &'static [Cmd], help: &'static str) -> Key {
    Key {
        boolean: true,
        ..key(name, default, cmds, help)
    }
}

/// Every accepted key. `auto` defers to the modality's protocol default.
pub const KEYS: &[Key] = &[
    key("seed", "0", &[], "master seed"),
    key("out", "out", &[], "output directory"),
    key("threads", "0", &[], "worker threads, 0 = all cores"),
    key("phantom.kind", "ct", &[Phantom], "ct or et"),
    key("phantom.n", "250", &[Phantom], "phantom grid size"),
    key("phantom.descriptor", "default", &[Phantom, Simulate], "transmission phantom file or `default`"),
    key("modality", "ct", &[Simulate], "ct or et"),
    key("ct.fine_n", "500", &[Simulate], "generation grid size"),
    key("ct.recon_n", "250", &[Simulate], "reconstruction grid size"),
    key("ct.n_angles", "90", &[Simulate], "projection angles"),
    key("ct.i0", "3e5", &[Simulate], "blank-scan photon count"),
    key("et.n", "400", &[Simulate], "grid size"),
    key("et.n_angles", "300", &[Simulate], "projection angles"),
    key("et.counts", "1e7", &[Simulate], "expected total counts"),
    key("et.psf_fwhm_bins", "3", &[Simulate], "detector blur FWHM in bins"),
    key("et.realizations", "20", &[Simulate], "noise realizations"),
    key("data", "data", DATA, "dataset directory"),
    key("realization", "0", &[Reconstruct], "noisy realization to reconstruct"),
    key("method", "el", &[Reconstruct, Sweep], "cgls, mlem, tikhonov, tv, tvl2 or el"),
    key("fidelity", "auto", &[Reconstruct, Sweep], "ls, poisson or auto (from the modality)"),
    key("alpha", "0", &[Reconstruct, Sweep], "penalty weight"),
    key("mu", "0", &[Reconstruct, Sweep], "curvature weight of tvl2"),
    key("beta", "0.03", RECON, "edge sensitivity of el"),
    key("eps_rel", "1e-5", &[Reconstruct, Sweep], "tv smoothing, relative to the image maximum"),
    key("gamma_rel", "1", &[Reconstruct, Sweep], "tvl2 curvature scale, relative to the image maximum"),
    key("outer_iters", "auto", RECON, "outer iterations (cgls/mlem: iterations)"),
    key("inner_iters", "5", RECON, "inner iterations"),
    key("rho", "1e-4", RECON, "relative stopping tolerance"),
    key("tau", "auto", RECON, "denoising step of the poisson solver"),
    flag("precondition", "true", RECON, "precondition the inner solves"),
    key("sigma", "auto", RECON, "preconditioner shift scale"),
    key("sweep.param", "alpha", &[Sweep], "alpha, mu or beta"),
    key("sweep.values", "auto", &[Sweep], "comma-separated values, or auto for a log grid"),
    key("sweep.center", "auto", &[Sweep], "log grid centre"),
    key("sweep.points", "15", &[Sweep, Report], "log grid points"),
    key("sweep.decades", "4", &[Sweep, Report], "log grid span in decades"),
    key("sweep.realizations", "auto", &[Sweep, Report], "realizations averaged per value"),
    key("report.methods", "auto", &[Report], "comma-separated methods"),
    key("report.max_extensions", "3", &[Report], "grid continuations past an end-point minimum"),
    key("verify.trials", "100", &[Verify], "error-bound trials"),
    key("verify.n", "16", &[Verify], "error-bound grid size"),
    key("verify.adjoint_n", "64", &[Verify], "adjoint test grid size"),
    key("verify.adjoint_angles", "30", &[Verify], "adjoint test angles"),
    key("verify.adjoint_pairs", "100", &[Verify], "adjoint test vector pairs"),
    key("verify.gradient_n", "32", &[Verify], "gradient test grid size"),
    key("verify.probes", "20", &[Verify], "gradient test probes"),
    key("verify.mlem_n", "32", &[Verify], "mlem fixed-point grid size"),
    flag("verify.corrupt_transpose", "false", &[Verify], "test hook: break the adjoint"),
];

/// Keys a dataset records about itself. Accepted in config files so that a
/// dataset's provenance can be fed back in; their values are recomputed.
pub const RECORDED: &[&str] = &[
    "ct.seed",
    "et.seed",
    "et.intensity_scale",
    "projector.kernel",
    "projector.nbins",
    "projector.bin_pitch",
    "projector.psf_fwhm_bins",
    "realizations_written",
    "masks",
];

pub fn lookup(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

impl Key {
    pub fn is_global(&self) -> bool {
        self.cmds.is_empty()
    }

    pub fn applies_to(&self, cmd: Cmd) -> bool {
        self.is_global() || self.cmds.contains(&cmd)
    }

    /// Long flag under `cmd`: the key with the command's own prefix dropped
    /// and separators turned into dashes.
    pub fn flag_name(&self, cmd: Cmd) -> String {
        let prefix = format!("{}.", cmd.name());
        let base = self.name.strip_prefix(prefix.as_str()).unwrap_or(self.name);
        base.replace(['.', '_'], "-")
    }
}

/// Fully resolved settings of one run.
#[derive(Debug, Clone)]
pub struct Settings {
    pub cmd: Cmd,
    values: KvMap,
}

impl Settings {
    /// `file` and `flags` are checked against the registry; flags win.
    pub fn resolve(cmd: Cmd, file: &KvMap, flags: &KvMap) -> CliResult<Settings> {
        for (k, v) in file.iter() {
            if k == "command" {
                if v != cmd.name() {
                    return Err(CliError::config(format!(
                        "config file is for command {v:?}, not {:?}",
                        cmd.name()
                    )));
                }
            } else if lookup(k).is_none() && !RECORDED.contains(&k) {
                return Err(CliError::config(format!("unknown key {k:?}")));
            }
        }
        for k in flags.keys() {
            if lookup(k).is_none() {
                return Err(CliError::config(format!("unknown key {k:?}")));
            }
        }
        let mut values = KvMap::new();
        values.set("command", cmd.name());
        for k in KEYS.iter().filter(|k| k.applies_to(cmd)) {
            values.set(k.name, k.default);
        }
        for (k, v) in file.iter().chain(flags.iter()) {
            if lookup(k).is_some() {
                values.set(k, v);
            }
        }
        Ok(Settings { cmd, values })
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .or_else(|| lookup(key).map(|k| k.default))
            .unwrap_or_else(|| panic!("unregistered key {key}"))
    }

    pub fn str(&self, key: &str) -> &str {
        self.raw(key)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<T> {
        let v = self.raw(key);
        v.parse()
            .map_err(|_| CliError::config(format!("bad value for {key}: {v:?}")))
    }

    /// `None` when the value is `auto`.
    pub fn auto<T: FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        match self.raw(key) {
            "auto" => Ok(None),
            _ => self.get(key).map(Some),
        }
    }

    /// Comma-separated list, `None` when `auto`.
    pub fn list<T: FromStr>(&self, key: &str) -> CliResult<Option<Vec<T>>> {
        match self.raw(key) {
            "auto" => Ok(None),
            v => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| CliError::config(format!("bad entry {s:?} in {key}")))
                })
                .collect::<CliResult<Vec<T>>>()
                .map(Some),
        }
    }

    /// The resolved configuration as it is written to `provenance.txt`.
    pub fn to_kv(&self) -> &KvMap {
        &self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(text: &str) -> KvMap {
        KvMap::parse(text).unwrap()
    }

    #[test]
    fn flags_override_file_per_key() {
        let s = Settings::resolve(Cmd::Reconstruct, &kv("alpha=1\nbeta=0.5\n"), &kv("alpha=2\n")).unwrap();
        assert_eq!(s.str("alpha"), "2");
        assert_eq!(s.str("beta"), "0.5");
        assert_eq!(s.str("rho"), "1e-4");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = Settings::resolve(Cmd::Reconstruct, &kv("alhpa=1\n"), &KvMap::new()).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn mismatched_command_is_rejected() {
        assert!(Settings::resolve(Cmd::Sweep, &kv("command=report\n"), &KvMap::new()).is_err());
    }

    #[test]
    fn resolved_settings_round_trip() {
        let s = Settings::resolve(Cmd::Sweep, &kv("sweep.values=1,2\n"), &kv("seed=7\n")).unwrap();
        let back = Settings::resolve(Cmd::Sweep, &kv(&s.to_kv().to_text()), &KvMap::new()).unwrap();
        assert_eq!(back.to_kv(), s.to_kv());
        assert_eq!(back.list::<f64>("sweep.values").unwrap(), Some(vec![1.0, 2.0]));
    }

    #[test]
    fn recorded_dataset_keys_are_accepted_but_not_kept() {
        let s = Settings::resolve(Cmd::Simulate, &kv("projector.nbins=9\n"), &KvMap::new()).unwrap();
        assert!(s.to_kv().get("projector.nbins").is_none());
    }

    #[test]
    fn flag_names_drop_the_command_prefix() {
        assert_eq!(lookup("verify.trials").unwrap().flag_name(Cmd::Verify), "trials");
        assert_eq!(lookup("sweep.points").unwrap().flag_name(Cmd::Report), "sweep-points");
        assert_eq!(lookup("ct.fine_n").unwrap().flag_name(Cmd::Simulate), "ct-fine-n");
        let mut seen = std::collections::HashSet::new();
        for c in Cmd::ALL {
            for k in KEYS.iter().filter(|k| k.applies_to(c)) {
                assert!(seen.insert((c.name(), k.flag_name(c))), "{}", k.name);
            }
        }
    }
}
