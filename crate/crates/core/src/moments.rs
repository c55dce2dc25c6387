//! Cross-moment tables E[(v^K)^j (v^M)^k] for j + k up to a fixed order.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::fmt_f64;

/// Cross-moments with a per-entry diagnostic. What the diagnostic means depends
/// on the producer: a quadrature tolerance, a Monte Carlo standard error, or
/// the condition estimate of the linear system that recovered the entry.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    max_order: usize,
    values: Vec<f64>,
    diagnostics: Vec<f64>,
}

fn index(j: usize, k: usize) -> usize {
    let n = j + k;
    n * (n + 1) / 2 + k
}

impl MomentTable {
    /// Table with entry (0, 0) = 1 and everything else zero.
    pub fn new(max_order: usize) -> Self {
        let len = index(0, max_order) + 1;
        let mut values = vec![0.0; len];
        values[0] = 1.0;
        Self { max_order, values, diagnostics: vec![0.0; len] }
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        assert!(j + k <= self.max_order, "moment ({j}, {k}) beyond order {}", self.max_order);
        self.values[index(j, k)]
    }

    pub fn diagnostic(&self, j: usize, k: usize) -> f64 {
        assert!(j + k <= self.max_order);
        self.diagnostics[index(j, k)]
    }

    pub fn set(&mut self, j: usize, k: usize, value: f64, diagnostic: f64) {
        assert!(j + k <= self.max_order);
        self.values[index(j, k)] = value;
        self.diagnostics[index(j, k)] = diagnostic;
    }

    /// Entries in order of total degree, then by power of v^M.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64, f64)> + '_ {
        (0..=self.max_order)
            .flat_map(|n| (0..=n).map(move |k| (n - k, k)))
            .map(|(j, k)| (j, k, self.get(j, k), self.diagnostic(j, k)))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Largest |self − reference| / |reference| over shared entries of order ≥ 1,
    /// with the entry where it occurs. Reference entries below 1e-12 in magnitude
    /// are compared absolutely.
    pub fn max_relative_error(&self, reference: &MomentTable) -> (f64, (usize, usize)) {
        let order = self.max_order.min(reference.max_order);
        let mut worst = (0.0, (0, 0));
        for n in 1..=order {
            for k in 0..=n {
                let j = n - k;
                let r = reference.get(j, k);
                let scale = if r.abs() < 1e-12 { 1.0 } else { r.abs() };
                let err = (self.get(j, k) - r).abs() / scale;
                if err > worst.0 {
                    worst = (err, (j, k));
                }
            }
        }
        worst
    }

    /// Scales entry (j, k) by `c^j`, the effect of v^K → c·v^K.
    pub fn scale_good_value(&self, c: f64) -> Self {
        let mut out = self.clone();
        for (j, k, v, d) in self.iter() {
            out.set(j, k, v * c.powi(j as i32), d);
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "j,k,value,diagnostic")?;
        for (j, k, v, d) in self.iter() {
            writeln!(w, "{j},{k},{},{}", fmt_f64(v), fmt_f64(d))?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryDoc {
    j: usize,
    k: usize,
    value: f64,
    diagnostic: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableDoc {
    max_order: usize,
    entries: Vec<EntryDoc>,
}

impl Serialize for MomentTable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        TableDoc {
            max_order: self.max_order,
            entries: self
                .iter()
                .map(|(j, k, value, diagnostic)| EntryDoc { j, k, value, diagnostic })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MomentTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = TableDoc::deserialize(d)?;
        let mut table = MomentTable::new(doc.max_order);
        for e in doc.entries {
            if e.j + e.k > doc.max_order {
                return Err(serde::de::Error::custom(format!(
                    "entry ({}, {}) exceeds max_order {}",
                    e.j, e.k, doc.max_order
                )));
            }
            table.set(e.j, e.k, e.value, e.diagnostic);
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_covers_every_entry_once() {
        let t = MomentTable::new(4);
        let keys: Vec<_> = t.iter().map(|(j, k, _, _)| (j, k)).collect();
        assert_eq!(keys.len(), 15);
        assert_eq!(keys[0], (0, 0));
        assert_eq!(keys[1], (1, 0));
        assert_eq!(keys[2], (0, 1));
        assert_eq!(t.get(0, 0), 1.0);
    }

    #[test]
    fn json_keeps_explicit_keys() {
        let mut t = MomentTable::new(2);
        t.set(1, 1, 6.0, 1e-9);
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.contains("\"j\":1,\"k\":1,\"value\":6.0"));
        let back: MomentTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn relative_error_and_scaling() {
        let mut a = MomentTable::new(2);
        a.set(1, 0, 2.0, 0.0);
        a.set(2, 0, 4.0, 0.0);
        let mut b = a.clone();
        b.set(2, 0, 4.04, 0.0);
        let (err, at) = b.max_relative_error(&a);
        assert!((err - 0.01).abs() < 1e-12);
        assert_eq!(at, (2, 0));
        let s = a.scale_good_value(3.0);
        assert_eq!(s.get(2, 0), 36.0);
        assert_eq!(s.get(0, 0), 1.0);
    }

    #[test]
    fn csv_has_header() {
        let mut buf = Vec::new();
        MomentTable::new(1).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("j,k,value,diagnostic\n0,0,"));
        assert_eq!(text.lines().count(), 4);
    }
}
