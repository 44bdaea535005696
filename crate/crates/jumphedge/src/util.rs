//! Small shared helpers: canonical hashing, deterministic number formatting,
//! atomic file writes.

use std::io::Write;
use std::path::Path;

/// FNV-1a 64-bit hash; stable across platforms and runs.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Hash of any serializable value through its TOML form, used to tie price
/// surfaces to the inputs that produced them and to stamp output files.
pub fn hash_serializable<T: serde::Serialize>(value: &T) -> u64 {
    let text = toml::to_string(value).unwrap_or_else(|_| format!("{:p}", value as *const T));
    fnv1a64(text.as_bytes())
}

/// Fixed 12-significant-digit scientific formatting with `.` separator, so
/// output files are byte-identical across platforms.
pub fn fmt_sig12(x: f64) -> String {
    if x == 0.0 {
        // normalize -0.0
        return format!("{:.11e}", 0.0f64);
    }
    format!("{:.11e}", x)
}

/// Writes through a temporary file in the same directory, then renames.
pub fn atomic_write(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp-partial");
    {
        let mut file = std::fs::File::create(&tmp)?;
        file.write_all(contents)?;
        file.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}
