//! Points of interest: counts per category and per name keyword, total and
//! category entropy around a point.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Region;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiRecord {
    pub lat: f64,
    pub lon: f64,
    pub name: String,
    pub category: String,
}

pub fn parse_pois<R: Read>(src: R) -> Result<Vec<PoiRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(src);
    let headers = rdr.headers()?.clone();
    let expected = ["lat", "lon", "name", "category"];
    if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::Schema(format!(
            "POI header must be `lat,lon,name,category`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let rec: PoiRecord = rec?;
        if !(rec.lat.is_finite() && rec.lon.is_finite()) {
            return Err(Error::Parse(format!("non-finite POI coordinate for `{}`", rec.name)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_pois(path: &Path) -> Result<Vec<PoiRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_pois(std::io::BufReader::new(f))
}

pub fn write_pois<W: Write>(sink: W, pois: &[PoiRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["lat", "lon", "name", "category"])?;
    for p in pois {
        w.write_record([
            format!("{:.8}", p.lat),
            format!("{:.8}", p.lon),
            p.name.clone(),
            p.category.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<poi sink>", e))?;
    Ok(())
}

/// Shannon entropy in bits of a count vector. Zero when at most one bin is
/// non-empty.
pub fn entropy_bits(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / total;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

struct Entry {
    x: f64,
    y: f64,
    category: usize,
    name_lower: String,
}

/// POIs projected into the region frame and bucketed for radius queries.
pub struct PoiIndex {
    categories: Vec<String>,
    keywords: Vec<String>,
    bucket_m: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
    entries: Vec<Entry>,
    /// Records whose category fell outside the vocabulary.
    pub unknown_categories: usize,
}

impl PoiIndex {
    /// `categories` is the vocabulary; anything else lands in a trailing
    /// "other" bin. Keyword matching is case-insensitive substring search on
    /// the name.
    pub fn new(pois: &[PoiRecord], region: &Region, categories: &[String], keywords: &[String], bucket_m: f64) -> Self {
        let lookup: HashMap<&str, usize> = categories
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        let mut unknown = 0;
        let mut entries = Vec::with_capacity(pois.len());
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for p in pois {
            let (x, y) = region.project_unchecked(p.lat, p.lon);
            let category = match lookup.get(p.category.trim()) {
                Some(&i) => i,
                None => {
                    unknown += 1;
                    categories.len()
                }
            };
            let key = ((x / bucket_m).floor() as i64, (y / bucket_m).floor() as i64);
            buckets.entry(key).or_default().push(entries.len());
            entries.push(Entry {
                x,
                y,
                category,
                name_lower: p.name.to_lowercase(),
            });
        }
        Self {
            categories: categories.to_vec(),
            keywords: keywords.iter().map(|k| k.to_lowercase()).collect(),
            bucket_m,
            buckets,
            entries,
            unknown_categories: unknown,
        }
    }

    /// Feature names in output order.
    pub fn names(categories: &[String], keywords: &[String]) -> Vec<String> {
        let mut v: Vec<String> = categories.iter().map(|c| format!("poi_cat_{c}")).collect();
        v.push("poi_cat_other".into());
        v.extend(keywords.iter().map(|k| format!("poi_kw_{}", k.to_lowercase())));
        v.push("poi_total".into());
        v.push("poi_entropy".into());
        v
    }

    pub fn len(&self) -> usize {
        self.categories.len() + 1 + self.keywords.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Category counts, keyword counts, total and entropy for POIs within
    /// `radius_m` of `(x, y)`.
    pub fn features(&self, x: f64, y: f64, radius_m: f64) -> Vec<f64> {
        let n_cat = self.categories.len() + 1;
        let mut out = vec![0.0; self.len()];
        let r2 = radius_m * radius_m;
        let reach = (radius_m / self.bucket_m).ceil() as i64;
        let bx = (x / self.bucket_m).floor() as i64;
        let by = (y / self.bucket_m).floor() as i64;
        let mut total = 0.0;
        for i in bx - reach..=bx + reach {
            for j in by - reach..=by + reach {
                let Some(ids) = self.buckets.get(&(i, j)) else {
                    continue;
                };
                for &id in ids {
                    let e = &self.entries[id];
                    if (e.x - x).powi(2) + (e.y - y).powi(2) > r2 {
                        continue;
                    }
                    out[e.category] += 1.0;
                    for (k, kw) in self.keywords.iter().enumerate() {
                        if e.name_lower.contains(kw.as_str()) {
                            out[n_cat + k] += 1.0;
                        }
                    }
                    total += 1.0;
                }
            }
        }
        let t = n_cat + self.keywords.len();
        out[t] = total;
        out[t + 1] = entropy_bits(&out[..n_cat]);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn region() -> Region {
        Region::from_size_m("t", 37.0, -122.0, 1000.0, 1000.0, 50.0).unwrap()
    }

    fn at(region: &Region, x: f64, y: f64, name: &str, cat: &str) -> PoiRecord {
        let (lat, lon) = region.unproject(x, y);
        PoiRecord {
            lat,
            lon,
            name: name.into(),
            category: cat.into(),
        }
    }

    fn cats() -> Vec<String> {
        ["car_repair", "cafe", "bank", "school"].map(String::from).to_vec()
    }

    #[test]
    fn entropy_values() {
        assert_eq!(entropy_bits(&[]), 0.0);
        assert_eq!(entropy_bits(&[0.0, 5.0, 0.0]), 0.0);
        assert_abs_diff_eq!(entropy_bits(&[1.0, 1.0, 1.0, 1.0]), 2.0, epsilon = 1e-15);
        let oracle = -(0.75f64 * 0.75f64.log2() + 0.25 * 0.25f64.log2());
        assert_abs_diff_eq!(entropy_bits(&[3.0, 1.0]), oracle, epsilon = 1e-15);
        assert_abs_diff_eq!(oracle, 0.8113, epsilon = 1e-4);
    }

    #[test]
    fn empty_neighbourhood() {
        let r = region();
        let idx = PoiIndex::new(&[], &r, &cats(), &["towing".into()], 100.0);
        let f = idx.features(500.0, 500.0, 100.0);
        assert!(f.iter().all(|v| *v == 0.0));
        assert_eq!(f.len(), PoiIndex::names(&cats(), &["towing".into()]).len());
    }

    #[test]
    fn counts_keywords_and_other() {
        let r = region();
        let pois = vec![
            at(&r, 500.0, 500.0, "Joe's TOWING", "car_repair"),
            at(&r, 560.0, 500.0, "Bean", "cafe"),
            at(&r, 500.0, 590.0, "First", "bank"),
            at(&r, 450.0, 450.0, "Mystery Towing", "laundromat"),
            at(&r, 700.0, 500.0, "Far", "school"),
        ];
        let idx = PoiIndex::new(&pois, &r, &cats(), &["towing".into(), "smog".into()], 100.0);
        assert_eq!(idx.unknown_categories, 1);
        let f = idx.features(500.0, 500.0, 100.0);
        // car_repair, cafe, bank, school, other, towing, smog, total, entropy
        assert_eq!(&f[..8], &[1.0, 1.0, 1.0, 0.0, 1.0, 2.0, 0.0, 4.0]);
        assert_abs_diff_eq!(f[8], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let r = region();
        let pois = vec![at(&r, 1.0, 2.0, "A, \"quoted\"", "cafe")];
        let mut buf = Vec::new();
        write_pois(&mut buf, &pois).unwrap();
        let back = parse_pois(buf.as_slice()).unwrap();
        assert_eq!(back[0].name, pois[0].name);
        assert!((back[0].lat - pois[0].lat).abs() < 1e-8);
        assert!(parse_pois("a,b\n1,2\n".as_bytes()).is_err());
    }
}
