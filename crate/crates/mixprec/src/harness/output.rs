//! Artifact formatting: config fingerprints and CSV assembly.
//!
//! Every CSV written by the drivers starts with a `# config=<hex>` comment
//! line carrying an FNV-1a hash of the producing configuration's JSON form.
//! Tooling that joins a trace against a summary can check the fingerprints
//! match instead of trusting file timestamps.

use serde::Serialize;

use crate::error::Result;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a. Not cryptographic; collision resistance is irrelevant here,
/// stability across runs and platforms is the point.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Fingerprint of a configuration value via its canonical JSON encoding.
pub fn config_fingerprint<T: Serialize>(cfg: &T) -> Result<u64> {
    Ok(fnv1a64(serde_json::to_string(cfg)?.as_bytes()))
}

/// `# config=<hex>` comment line plus the column header.
pub fn csv_header(fingerprint: u64, columns: &str) -> String {
    format!("# config={fingerprint:016x}\n{columns}\n")
}

/// Floats are written with Rust's default formatting, which is the shortest
/// string that round-trips. NaN and infinities appear by name.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Render the solver trace as CSV.
pub fn trace_csv(trace: &[crate::cg::IterRecord], fingerprint: u64) -> String {
    let mut s = csv_header(fingerprint, "iteration,residual,rtz1,beta,alpha,pap,rtr");
    for rec in trace {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            rec.iteration,
            fmt_f64(rec.residual),
            fmt_f64(rec.rtz1),
            fmt_f64(rec.beta),
            fmt_f64(rec.alpha),
            fmt_f64(rec.pap),
            fmt_f64(rec.rtr),
        ));
    }
    s
}

/// Render per-kernel counters as CSV under a fingerprint header.
pub fn counters_csv(counters: &crate::context::OpCounters, fingerprint: u64) -> String {
    let body = counters.to_csv();
    // to_csv already emits its own column header; splice the comment line in
    // front so all artifacts share the leading-fingerprint convention.
    format!("# config={fingerprint:016x}\n{body}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_known_vectors() {
        // Published FNV-1a 64 reference values.
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn fingerprint_tracks_config_changes() {
        #[derive(Serialize)]
        struct C {
            tol: f64,
        }
        let a = config_fingerprint(&C { tol: 1e-10 }).unwrap();
        let b = config_fingerprint(&C { tol: 1e-8 }).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, config_fingerprint(&C { tol: 1e-10 }).unwrap());
    }

    #[test]
    fn header_shape() {
        let h = csv_header(0xdead_beef, "a,b");
        assert_eq!(h, "# config=00000000deadbeef\na,b\n");
    }

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, 1e-300, -1.5, f64::MAX] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(f64::NAN), "NaN");
    }
}
