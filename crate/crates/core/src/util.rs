//! Small shared helpers: stable hashing, seeded RNG streams, score rounding,
//! binomial intervals and file digests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::path::Path;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over a sequence of byte parts, with a separator byte between parts
/// so that `["ab", "c"]` and `["a", "bc"]` hash differently.
pub fn stable_hash<I, B>(parts: I) -> u64
where
    I: IntoIterator<Item = B>,
    B: AsRef<[u8]>,
{
    let mut h = FNV_OFFSET;
    for part in parts {
        for &b in part.as_ref() {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        h ^= 0xff;
        h = h.wrapping_mul(FNV_PRIME);
    }
    // splitmix finalizer; raw FNV has weak low bits
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic RNG stream derived from a base seed and a label path.
pub fn derived_rng<I, B>(seed: u64, parts: I) -> ChaCha8Rng
where
    I: IntoIterator<Item = B>,
    B: AsRef<[u8]>,
{
    let seed_bytes = seed.to_le_bytes();
    let mut all: Vec<Vec<u8>> = vec![seed_bytes.to_vec()];
    all.extend(parts.into_iter().map(|p| p.as_ref().to_vec()));
    ChaCha8Rng::seed_from_u64(stable_hash(all))
}

/// Rounds to 12 significant decimal digits, the precision used for stored scores.
pub fn round_sig12(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let s = format!("{:.11e}", x);
    let r: f64 = s.parse().unwrap_or(x);
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Wilson score interval at 95% confidence.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054_f64;
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * ((p * (1.0 - p) / n) + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of a file, or of every file in a directory (sorted by name).
pub fn digest_path(path: &Path) -> std::io::Result<String> {
    if path.is_dir() {
        let mut entries: Vec<_> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        let mut hasher = Sha256::new();
        for p in entries {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            if name == "manifest.json" {
                continue;
            }
            hasher.update(name.as_bytes());
            hasher.update(std::fs::read(&p)?);
        }
        Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
    } else {
        Ok(sha256_hex(&std::fs::read(path)?))
    }
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_hash_separates_parts() {
        assert_ne!(stable_hash(["ab", "c"]), stable_hash(["a", "bc"]));
        assert_eq!(stable_hash(["x", "y"]), stable_hash(["x", "y"]));
    }

    #[test]
    fn round_sig12_keeps_twelve_digits() {
        let third = round_sig12(1.0 / 3.0);
        assert_eq!(third, 0.333333333333);
        assert_eq!(round_sig12(-0.25), -0.25);
        assert_eq!(round_sig12(0.0), 0.0);
        assert!((round_sig12(2.0 / 3.0) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn wilson_interval_brackets_rate() {
        let (lo, hi) = wilson_interval(50, 100);
        assert!(lo < 0.5 && hi > 0.5);
        assert!((hi - lo - 0.19).abs() < 0.01);
        let (lo, hi) = wilson_interval(100, 100);
        assert!(lo > 0.95 && hi == 1.0);
    }
}
