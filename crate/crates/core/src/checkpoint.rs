//! Binary checkpoints.
//!
//! A checkpoint is a self-contained snapshot: besides the prognostic
//! fields it embeds the resolved configuration text, so a file can be
//! post-processed or resumed without the original input file. All numbers
//! are little-endian; the format is versioned and round-trips bit-exactly.
//!
//! Layout: magic "ABLL", version, grid dimensions, time, step, rng seed,
//! config hash, config text, the five field arrays (u, v, w, theta, e),
//! and an optional statistics block so a resumed run reproduces its
//! averaging window exactly. The seed is the complete generator state
//! here because random numbers are drawn only during initialization.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::diagnostics::StatsAccumulator;
use crate::dynamics::State;
use crate::error::AblError;
use crate::grid::Grid;

pub const MAGIC: [u8; 4] = *b"ABLL";
pub const VERSION: u32 = 1;

/// A loaded snapshot with everything needed to resume or post-process.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub seed: u64,
    pub state: State,
    pub stats: Option<StatsAccumulator>,
}

/// Writes a checkpoint atomically (temp file + rename).
pub fn save(
    path: &Path,
    state: &State,
    seed: u64,
    config: &RunConfig,
    stats: Option<&StatsAccumulator>,
) -> Result<(), AblError> {
    let tmp = path.with_extension("tmp");
    {
        let file = fs::File::create(&tmp)?;
        let mut w = BufWriter::new(file);
        w.write_all(&MAGIC)?;
        put_u32(&mut w, VERSION)?;
        put_u32(&mut w, state.u.nx as u32)?;
        put_u32(&mut w, state.u.ny as u32)?;
        put_u32(&mut w, state.u.nl as u32)?;
        put_f64(&mut w, state.t)?;
        put_u64(&mut w, state.step)?;
        put_u64(&mut w, seed)?;
        put_u64(&mut w, config.config_hash())?;
        let text = config.canonical();
        put_u32(&mut w, text.len() as u32)?;
        w.write_all(text.as_bytes())?;
        put_slice(&mut w, &state.u.data)?;
        put_slice(&mut w, &state.v.data)?;
        put_slice(&mut w, &state.w.data)?;
        put_slice(&mut w, &state.theta.data)?;
        put_slice(&mut w, &state.e.data)?;
        match stats {
            Some(acc) => {
                w.write_all(&[1u8])?;
                put_u64(&mut w, acc.samples)?;
                put_f64(&mut w, acc.sum_u_tau)?;
                put_f64(&mut w, acc.sum_qstar)?;
                for v in stats_vectors_ref(acc) {
                    put_slice(&mut w, v)?;
                }
            }
            None => w.write_all(&[0u8])?,
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads and validates a checkpoint.
pub fn load(path: &Path) -> Result<Checkpoint, AblError> {
    let file = fs::File::open(path)?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(AblError::Checkpoint(format!(
            "{}: bad magic {:02x?}",
            path.display(),
            magic
        )));
    }
    let version = get_u32(&mut r)?;
    if version != VERSION {
        return Err(AblError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let nx = get_u32(&mut r)? as usize;
    let ny = get_u32(&mut r)? as usize;
    let nz = get_u32(&mut r)? as usize;
    let t = get_f64(&mut r)?;
    let step = get_u64(&mut r)?;
    let seed = get_u64(&mut r)?;
    let hash = get_u64(&mut r)?;
    let text_len = get_u32(&mut r)? as usize;
    let mut text = vec![0u8; text_len];
    r.read_exact(&mut text)?;
    let text = String::from_utf8(text)
        .map_err(|_| AblError::Checkpoint("embedded config is not valid UTF-8".into()))?;
    let config = RunConfig::from_str(&text)?;
    if config.config_hash() != hash {
        return Err(AblError::Checkpoint(
            "embedded config does not match the stored hash".into(),
        ));
    }
    let g = &config.grid;
    if (g.nx, g.ny, g.nz) != (nx, ny, nz) {
        return Err(AblError::Checkpoint(format!(
            "grid dimensions {}x{}x{} disagree with the embedded config {}x{}x{}",
            nx, ny, nz, g.nx, g.ny, g.nz
        )));
    }
    let grid = Grid::new(g.nx, g.ny, g.nz, g.lx, g.ly, g.lz, g.z_bottom)?;

    let mut state = State::new(&grid);
    state.t = t;
    state.step = step;
    get_slice(&mut r, &mut state.u.data)?;
    get_slice(&mut r, &mut state.v.data)?;
    get_slice(&mut r, &mut state.w.data)?;
    get_slice(&mut r, &mut state.theta.data)?;
    get_slice(&mut r, &mut state.e.data)?;
    if !state.all_finite() {
        return Err(AblError::Checkpoint(
            "field arrays contain non-finite values".into(),
        ));
    }

    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let stats = match flag[0] {
        0 => None,
        1 => {
            let mut acc = StatsAccumulator::new(grid.nz);
            acc.samples = get_u64(&mut r)?;
            acc.sum_u_tau = get_f64(&mut r)?;
            acc.sum_qstar = get_f64(&mut r)?;
            for v in stats_vectors_mut(&mut acc) {
                get_slice(&mut r, v)?;
            }
            Some(acc)
        }
        other => {
            return Err(AblError::Checkpoint(format!(
                "invalid statistics flag {other}"
            )))
        }
    };

    Ok(Checkpoint {
        config,
        seed,
        state,
        stats,
    })
}

/// The most recent checkpoint in a directory, by step number encoded in
/// the file name written by the run loop.
pub fn latest_in(dir: &Path) -> Result<Option<PathBuf>, AblError> {
    let mut best: Option<(u64, PathBuf)> = None;
    if !dir.is_dir() {
        return Ok(None);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = match path.file_name().and_then(|n| n.to_str()) {
            Some(n) => n,
            None => continue,
        };
        let step = match name
            .strip_prefix("checkpoint_")
            .and_then(|s| s.strip_suffix(".bin"))
            .and_then(|s| s.parse::<u64>().ok())
        {
            Some(s) => s,
            None => continue,
        };
        if best.as_ref().map_or(true, |(b, _)| step > *b) {
            best = Some((step, path));
        }
    }
    Ok(best.map(|(_, p)| p))
}

/// Conventional file name for a checkpoint at a given step.
pub fn file_name(step: u64) -> String {
    format!("checkpoint_{step:010}.bin")
}

/// The accumulator's vectors in their serialization order.
fn stats_vectors_ref(a: &StatsAccumulator) -> [&Vec<f64>; 22] {
    [
        &a.sum_u,
        &a.sum_v,
        &a.sum_theta,
        &a.sum_uu,
        &a.sum_vv,
        &a.sum_ww,
        &a.sum_uw,
        &a.sum_vw,
        &a.sum_uv,
        &a.sum_wth,
        &a.sum_uth,
        &a.sum_vth,
        &a.sum_sgs_uw,
        &a.sum_sgs_vw,
        &a.sum_sgs_uv,
        &a.sum_sgs_wth,
        &a.sum_sgs_uth,
        &a.sum_sgs_vth,
        &a.sum_tke_sgs,
        &a.sum_nu_te,
        &a.sum_nu_t,
        &a.sum_gamma,
    ]
}

fn stats_vectors_mut(a: &mut StatsAccumulator) -> [&mut Vec<f64>; 22] {
    [
        &mut a.sum_u,
        &mut a.sum_v,
        &mut a.sum_theta,
        &mut a.sum_uu,
        &mut a.sum_vv,
        &mut a.sum_ww,
        &mut a.sum_uw,
        &mut a.sum_vw,
        &mut a.sum_uv,
        &mut a.sum_wth,
        &mut a.sum_uth,
        &mut a.sum_vth,
        &mut a.sum_sgs_uw,
        &mut a.sum_sgs_vw,
        &mut a.sum_sgs_uv,
        &mut a.sum_sgs_wth,
        &mut a.sum_sgs_uth,
        &mut a.sum_sgs_vth,
        &mut a.sum_tke_sgs,
        &mut a.sum_nu_te,
        &mut a.sum_nu_t,
        &mut a.sum_gamma,
    ]
}

fn put_u32<W: Write>(w: &mut W, x: u32) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn put_u64<W: Write>(w: &mut W, x: u64) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn put_f64<W: Write>(w: &mut W, x: f64) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn put_slice<W: Write>(w: &mut W, xs: &[f64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 8);
    for &x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)
}

fn get_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_slice<R: Read>(r: &mut R, out: &mut [f64]) -> std::io::Result<()> {
    let mut buf = vec![0u8; out.len() * 8];
    r.read_exact(&mut buf)?;
    for (x, chunk) in out.iter_mut().zip(buf.chunks_exact(8)) {
        *x = f64::from_le_bytes(chunk.try_into().expect("chunk size"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> RunConfig {
        let mut cfg = RunConfig::gabls1();
        cfg.grid.nx = 8;
        cfg.grid.ny = 8;
        cfg.grid.nz = 8;
        cfg.seed = 17;
        cfg
    }

    fn random_state(cfg: &RunConfig) -> State {
        let g = &cfg.grid;
        let grid = Grid::new(g.nx, g.ny, g.nz, g.lx, g.ly, g.lz, g.z_bottom).unwrap();
        let mut st = State::new(&grid);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for f in [&mut st.u, &mut st.v, &mut st.w, &mut st.theta, &mut st.e] {
            for x in f.data.iter_mut() {
                *x = rng.gen_range(-4.0..4.0);
            }
        }
        st.t = 1234.5678;
        st.step = 4242;
        st
    }

    fn random_stats(nz: usize) -> StatsAccumulator {
        let mut acc = StatsAccumulator::new(nz);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        acc.samples = 31;
        acc.sum_u_tau = 8.13;
        acc.sum_qstar = -0.31;
        for v in stats_vectors_mut(&mut acc) {
            for x in v.iter_mut() {
                *x = rng.gen_range(-2.0..2.0);
            }
        }
        acc
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(file_name(4242));
        let cfg = small_config();
        let st = random_state(&cfg);
        let stats = random_stats(cfg.grid.nz);
        save(&path, &st, cfg.seed, &cfg, Some(&stats)).unwrap();

        let ck = load(&path).unwrap();
        assert_eq!(ck.state.u.data, st.u.data);
        assert_eq!(ck.state.v.data, st.v.data);
        assert_eq!(ck.state.w.data, st.w.data);
        assert_eq!(ck.state.theta.data, st.theta.data);
        assert_eq!(ck.state.e.data, st.e.data);
        assert_eq!(ck.state.t, st.t);
        assert_eq!(ck.state.step, st.step);
        assert_eq!(ck.seed, cfg.seed);
        assert_eq!(ck.config, cfg);
        assert_eq!(ck.stats.unwrap(), stats);
    }

    #[test]
    fn stats_block_is_optional() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(file_name(1));
        let cfg = small_config();
        let st = random_state(&cfg);
        save(&path, &st, cfg.seed, &cfg, None).unwrap();
        let ck = load(&path).unwrap();
        assert!(ck.stats.is_none());
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(file_name(2));
        let cfg = small_config();
        save(&path, &random_state(&cfg), 1, &cfg, None).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        match load(&path) {
            Err(AblError::Checkpoint(msg)) => assert!(msg.contains("magic"), "{msg}"),
            other => panic!("expected a checkpoint error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_reports_both_versions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(file_name(3));
        let cfg = small_config();
        save(&path, &random_state(&cfg), 1, &cfg, None).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&9u32.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        match load(&path) {
            Err(AblError::VersionMismatch { found, expected }) => {
                assert_eq!(found, 9);
                assert_eq!(expected, VERSION);
            }
            other => panic!("expected a version mismatch, got {other:?}"),
        }
    }

    #[test]
    fn tampered_config_fails_the_hash_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(file_name(4));
        let cfg = small_config();
        save(&path, &random_state(&cfg), 1, &cfg, None).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        // Flip a digit inside the embedded TOML ("seed = 17").
        let text_start = 4 + 4 + 12 + 8 + 8 + 8 + 8 + 4;
        let text_len = cfg.canonical().len();
        let tail = &mut bytes[text_start..text_start + text_len];
        let pos = tail
            .windows(9)
            .position(|w| w == b"seed = 17")
            .expect("seed key present");
        tail[pos + 7] = b'2';
        fs::write(&path, &bytes).unwrap();
        match load(&path) {
            Err(AblError::Checkpoint(msg)) => assert!(msg.contains("hash"), "{msg}"),
            other => panic!("expected a checkpoint error, got {other:?}"),
        }
    }

    #[test]
    fn latest_picks_the_highest_step() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        let st = random_state(&cfg);
        for step in [5u64, 12, 9] {
            save(&dir.path().join(file_name(step)), &st, 1, &cfg, None).unwrap();
        }
        fs::write(dir.path().join("notes.txt"), "not a checkpoint").unwrap();
        let latest = latest_in(dir.path()).unwrap().unwrap();
        assert!(latest.ends_with(file_name(12)));
        let empty = tempfile::tempdir().unwrap();
        assert!(latest_in(empty.path()).unwrap().is_none());
    }
}
