use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use kvsift::kvcache::{CacheBudget, EvictionPolicy, PolicyKind, PolicyRegistry};
use kvsift::session::SessionConfig;
use kvsift::tasks::results::{write_results, ResultRow};
use kvsift::TinyModel;

use crate::config::{CacheSection, RunConfig};
use crate::error::usage;

pub const OUT_DIR_ENV: &str = "KVSIFT_OUT_DIR";

/// Flag, then environment, then config file.
pub fn out_dir(flag: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| cfg.output.dir.clone())
}

/// Writes through a temporary file in the same directory and renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

pub fn write_rows(path: &Path, rows: &[ResultRow]) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    write_results(rows, &mut buf)?;
    write_atomic(path, &buf)
}

pub fn load_model(path: &Path) -> anyhow::Result<TinyModel> {
    if !path.is_file() {
        return Err(usage(format!("model file {} not found", path.display())));
    }
    TinyModel::load(path).with_context(|| format!("loading {}", path.display()))
}

pub fn read_input(path: &Path, what: &str) -> anyhow::Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| usage(format!("cannot read {what} {}: {e}", path.display())))
}

/// Resolves a list of policy names, rejecting an empty list.
pub fn parse_policies(names: &[String]) -> anyhow::Result<Vec<PolicyKind>> {
    let registry = PolicyRegistry::builtin();
    let kinds = names
        .iter()
        .flat_map(|n| n.split(','))
        .map(str::trim)
        .filter(|n| !n.is_empty())
        .map(|n| registry.resolve(n).map_err(|e| usage(e.to_string())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if kinds.is_empty() {
        return Err(usage(format!(
            "no policies given; valid names: {}",
            registry.canonical_names().join(", ")
        )));
    }
    Ok(kinds)
}

/// The budget split used for `kind`: the usual sink/pool split, with the
/// entropy policy keeping `entropy_recent` recent slots.
pub fn budget_for(kind: PolicyKind, capacity: usize, n_sink: usize, entropy_recent: usize) -> anyhow::Result<CacheBudget> {
    let b = match kind {
        PolicyKind::SinkEntropy => {
            let pool = capacity
                .checked_sub(n_sink + entropy_recent)
                .ok_or_else(|| usage(format!("capacity {capacity} cannot hold {n_sink} sinks and {entropy_recent} recent slots")))?;
            CacheBudget::new(n_sink, pool, entropy_recent, capacity)?
        }
        _ => CacheBudget::for_policy(kind, capacity, n_sink)?,
    };
    Ok(b)
}

pub fn session_config(
    kind: PolicyKind,
    cache: &CacheSection,
    eta: f64,
    few_shot: usize,
    rng_seed: u64,
    reset_per_dialog: bool,
) -> anyhow::Result<SessionConfig> {
    let cfg = SessionConfig {
        policy: EvictionPolicy::with_seed(kind, rng_seed),
        budget: budget_for(kind, cache.capacity, cache.n_sink, cache.entropy_recent)?,
        eta_decay: eta,
        reset_per_dialog,
        few_shot_n: few_shot,
        record_entropy: false,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Runs `f` for every item on its own thread and returns results in input
/// order.
pub fn fan_out<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> anyhow::Result<R> + Sync) -> anyhow::Result<Vec<R>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = items.iter().map(|it| s.spawn(|| f(it))).collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    })
}
