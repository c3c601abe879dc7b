//! Answer sheets: an `I x J` matrix of +1 (correct) / -1 (wrong).

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::model::check_signs;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScoreMatrix {
    r: Array2<i8>,
}

impl ScoreMatrix {
    /// Wraps an `examinees x problems` matrix, checking every entry is a sign.
    pub fn new(r: Array2<i8>) -> Result<Self> {
        if r.nrows() == 0 || r.ncols() == 0 {
            return Err(Error::InvalidConfig("score matrix must be non-empty".into()));
        }
        for &v in r.iter() {
            check_signs(&[v])?;
        }
        Ok(ScoreMatrix { r })
    }

    /// Builds the matrix from answer columns, one per problem.
    pub fn from_columns(columns: &[Vec<i8>]) -> Result<Self> {
        let problems = columns.len();
        let examinees = columns.first().map_or(0, Vec::len);
        let mut r = Array2::zeros((examinees, problems));
        for (j, col) in columns.iter().enumerate() {
            if col.len() != examinees {
                return Err(Error::DimensionMismatch {
                    what: "column length",
                    expected: examinees,
                    got: col.len(),
                });
            }
            for (i, &v) in col.iter().enumerate() {
                r[[i, j]] = v;
            }
        }
        Self::new(r)
    }

    pub fn examinees(&self) -> usize {
        self.r.nrows()
    }

    pub fn problems(&self) -> usize {
        self.r.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> i8 {
        self.r[[i, j]]
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, i8> {
        self.r.column(j)
    }

    pub fn column_vec(&self, j: usize) -> Vec<i8> {
        self.r.column(j).to_vec()
    }

    pub fn as_array(&self) -> &Array2<i8> {
        &self.r
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.r.mapv(f64::from)
    }

    /// Fraction of +1 entries.
    pub fn fraction_correct(&self) -> f64 {
        let plus = self.r.iter().filter(|&&v| v > 0).count();
        plus as f64 / self.r.len() as f64
    }

    pub fn row_sums(&self) -> Vec<i64> {
        self.r
            .map_axis(Axis(1), |row| row.iter().map(|&v| i64::from(v)).sum())
            .to_vec()
    }

    /// CSV with a header row `p0..p{J-1}` and one row per examinee.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<String> = (0..self.problems()).map(|j| format!("p{j}")).collect();
        let wrap = |e: csv::Error| Error::Parse {
            path: "<score csv>".into(),
            message: e.to_string(),
        };
        w.write_record(&header).map_err(wrap)?;
        for row in self.r.rows() {
            w.write_record(row.iter().map(|v| v.to_string())).map_err(wrap)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "<score csv>".into(),
            source: e,
        })
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let wrap = |e: csv::Error| Error::Parse {
            path: "<score csv>".into(),
            message: e.to_string(),
        };
        let problems = rd.headers().map_err(wrap)?.len();
        let mut values = Vec::new();
        let mut examinees = 0;
        for rec in rd.records() {
            let rec = rec.map_err(wrap)?;
            if rec.len() != problems {
                return Err(Error::DimensionMismatch {
                    what: "score row length",
                    expected: problems,
                    got: rec.len(),
                });
            }
            for field in rec.iter() {
                let v: i8 = field.trim().parse().map_err(|_| Error::Parse {
                    path: "<score csv>".into(),
                    message: format!("not an answer value: {field:?}"),
                })?;
                values.push(v);
            }
            examinees += 1;
        }
        let r = Array2::from_shape_vec((examinees, problems), values).map_err(|e| Error::Parse {
            path: "<score csv>".into(),
            message: e.to_string(),
        })?;
        Self::new(r)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| e.context(path.display().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
            .map_err(|e| e.context(path.display().to_string()))
    }
}
