//! CSV rendering with a fixed 17-significant-digit float format.

pub type CliResult<T> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

/// `{:.16e}`: 17 significant digits, round-trips every `f64`.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// One CSV document built in memory, so it can be digested before writing.
pub struct Table {
    w: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[&str]) -> CliResult<Self> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(header)?;
        Ok(Table { w })
    }

    pub fn row<I, S>(&mut self, fields: I) -> CliResult<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.w.write_record(fields)?;
        Ok(())
    }

    pub fn into_bytes(self) -> CliResult<Vec<u8>> {
        Ok(self.w.into_inner().map_err(|e| e.to_string())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(num(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn table_layout() {
        let mut t = Table::new(&["a", "b"]).unwrap();
        t.row(["1", "x,y"]).unwrap();
        assert_eq!(String::from_utf8(t.into_bytes().unwrap()).unwrap(), "a,b\n1,\"x,y\"\n");
    }
}
