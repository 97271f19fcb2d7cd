use std::io::Write;

/// Numeric table with a group label per row. Missing values are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Numeric column names, in order.
    pub columns: Vec<String>,
    pub groups: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// CSV with a leading `country` column; undefined values are blank.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["country".to_string()];
        header.extend(self.columns.iter().cloned());
        wr.write_record(&header).map_err(std::io::Error::other)?;
        for (g, row) in self.groups.iter().zip(&self.rows) {
            let mut rec = vec![g.clone()];
            rec.extend(row.iter().map(|v| {
                if v.is_nan() {
                    String::new()
                } else {
                    fmt_num(*v)
                }
            }));
            wr.write_record(&rec).map_err(std::io::Error::other)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self, String> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers().map_err(|e| e.to_string())?.clone();
        if header.get(0) != Some("country") {
            return Err("first column must be `country`".into());
        }
        let columns: Vec<String> = header.iter().skip(1).map(String::from).collect();
        let (mut groups, mut rows) = (Vec::new(), Vec::new());
        for (i, rec) in rd.records().enumerate() {
            let rec = rec.map_err(|e| e.to_string())?;
            groups.push(rec[0].to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|v| {
                    if v.is_empty() {
                        Ok(f64::NAN)
                    } else {
                        v.parse::<f64>()
                    }
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| format!("row {}: non-numeric value", i + 2))?;
            if row.len() != columns.len() {
                return Err(format!("row {}: expected {} values", i + 2, columns.len()));
            }
            rows.push(row);
        }
        Ok(Self {
            columns,
            groups,
            rows,
        })
    }
}

/// Shortest round-trip formatting, stable across runs.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else {
        format!("{v}")
    }
}
