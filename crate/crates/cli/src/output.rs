use serde::Serialize;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use tempfile::NamedTempFile;

/// A CSV record with a fixed column schema.
pub trait Row: Serialize {
    const HEADER: &'static [&'static str];
}

/// Writes through a temporary file in the target directory, then renames
/// it over `path`.
pub fn write_atomic<F>(path: &Path, fill: F) -> io::Result<()>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_csv<R: Row>(path: &Path, rows: &[R]) -> io::Result<()> {
    write_atomic(path, |w| {
        let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        csv.write_record(R::HEADER)?;
        for r in rows {
            csv.serialize(r)?;
        }
        csv.flush()
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> io::Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct R {
        a: f64,
        b: Option<String>,
    }

    impl Row for R {
        const HEADER: &'static [&'static str] = &["a", "b"];
    }

    #[test]
    fn header_only_and_replacement() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        write_csv::<R>(&path, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a,b\n");
        write_csv(&path, &[R { a: 1.5, b: None }, R { a: 2.0, b: Some("e".into()) }]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a,b\n1.5,\n2.0,e\n");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
