//! Download-once cache of the benchmark files with length-based integrity
//! checks.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use super::DatasetId;
use crate::error::{Error, Result};

/// Overrides the default `./data` cache directory.
pub const DATA_DIR_ENV: &str = "RELUHEAD_DATA_DIR";

pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("data"), PathBuf::from)
}

/// Fetches a URL into a writer; returns the number of bytes written.
pub trait Downloader {
    fn download(&self, url: &str, out: &mut dyn Write) -> Result<u64>;
}

/// Blocking HTTPS downloader.
#[derive(Debug, Default)]
pub struct HttpDownloader;

impl Downloader for HttpDownloader {
    fn download(&self, url: &str, out: &mut dyn Write) -> Result<u64> {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(600)))
            .build()
            .new_agent();
        let resp = agent.get(url).call().map_err(|e| Error::Network(format!("{url}: {e}")))?;
        let mut reader = resp.into_body().into_reader();
        io::copy(&mut reader, out).map_err(|e| Error::Network(format!("{url}: {e}")))
    }
}

#[derive(Clone, Copy, Debug)]
enum Check {
    /// Accept the uncompressed file at `raw` bytes or the `.gz` at `gz` bytes.
    Lengths { raw: u64, gz: u64 },
    /// Accept any file that parses to this many rows.
    Rows(usize),
}

#[derive(Clone, Copy, Debug)]
struct Remote {
    name: &'static str,
    urls: &'static [&'static str],
    check: Check,
    gzipped: bool,
}

const MNIST_URLS: &[&str] = &[
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
];
const FASHION_URLS: &[&str] = &["http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/"];
const WDBC_URLS: &[&str] =
    &["https://archive.ics.uci.edu/ml/machine-learning-databases/breast-cancer-wisconsin/"];

const fn idx(name: &'static str, urls: &'static [&'static str], raw: u64, gz: u64) -> Remote {
    Remote { name, urls, check: Check::Lengths { raw, gz }, gzipped: true }
}

fn remotes(id: DatasetId) -> Vec<Remote> {
    let train_img = 16 + 60_000 * 784;
    let test_img = 16 + 10_000 * 784;
    match id {
        DatasetId::Mnist => vec![
            idx("train-images-idx3-ubyte", MNIST_URLS, train_img, 9_912_422),
            idx("train-labels-idx1-ubyte", MNIST_URLS, 60_008, 28_881),
            idx("t10k-images-idx3-ubyte", MNIST_URLS, test_img, 1_648_877),
            idx("t10k-labels-idx1-ubyte", MNIST_URLS, 10_008, 4_542),
        ],
        DatasetId::Fashion => vec![
            idx("train-images-idx3-ubyte", FASHION_URLS, train_img, 26_421_880),
            idx("train-labels-idx1-ubyte", FASHION_URLS, 60_008, 29_515),
            idx("t10k-images-idx3-ubyte", FASHION_URLS, test_img, 4_422_102),
            idx("t10k-labels-idx1-ubyte", FASHION_URLS, 10_008, 5_148),
        ],
        DatasetId::Wdbc => vec![Remote {
            name: "wdbc.data",
            urls: WDBC_URLS,
            check: Check::Rows(569),
            gzipped: false,
        }],
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FileStatus {
    Cached,
    Downloaded,
    /// A cached copy failed its integrity check and was replaced.
    Replaced { reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FetchReport {
    pub files: Vec<(PathBuf, FileStatus)>,
}

impl FetchReport {
    pub fn downloads(&self) -> usize {
        self.files.iter().filter(|(_, s)| *s != FileStatus::Cached).count()
    }
}

fn verify(path: &Path, check: Check, gz: bool) -> std::result::Result<(), String> {
    match check {
        Check::Lengths { raw, gz: gz_len } => {
            let len = fs::metadata(path).map_err(|e| e.to_string())?.len();
            let want = if gz { gz_len } else { raw };
            if len == want {
                Ok(())
            } else {
                Err(format!("{len} bytes, expected {want}"))
            }
        }
        Check::Rows(rows) => match super::load_wdbc(path) {
            Ok(ds) if ds.len() == rows => Ok(()),
            Ok(ds) => Err(format!("{} rows, expected {rows}", ds.len())),
            Err(e) => Err(e.to_string()),
        },
    }
}

/// Ensures every file of `id` is present under `dir/<id>/`, downloading only
/// what is missing or fails its integrity check.
pub fn fetch(id: DatasetId, dir: &Path) -> Result<FetchReport> {
    fetch_with(id, dir, &HttpDownloader)
}

pub fn fetch_with(id: DatasetId, dir: &Path, downloader: &dyn Downloader) -> Result<FetchReport> {
    let base = dir.join(id.as_str());
    fs::create_dir_all(&base)?;
    let mut files = Vec::new();
    for remote in remotes(id) {
        let plain = base.join(remote.name);
        let gz = base.join(format!("{}.gz", remote.name));
        let mut reason = None;
        let mut cached = None;
        for (path, is_gz) in [(&plain, false), (&gz, true)] {
            if !path.exists() {
                continue;
            }
            match verify(path, remote.check, is_gz) {
                Ok(()) => {
                    cached = Some(path.clone());
                    break;
                }
                Err(why) => {
                    fs::remove_file(path)?;
                    reason = Some(format!("{}: {why}", path.display()));
                }
            }
        }
        if let Some(path) = cached {
            files.push((path, FileStatus::Cached));
            continue;
        }
        let (target, file_name) = if remote.gzipped {
            (gz.clone(), format!("{}.gz", remote.name))
        } else {
            (plain.clone(), remote.name.to_string())
        };
        download_verified(downloader, &remote, &file_name, &target)?;
        let status = match reason {
            Some(reason) => FileStatus::Replaced { reason },
            None => FileStatus::Downloaded,
        };
        files.push((target, status));
    }
    Ok(FetchReport { files })
}

fn download_verified(downloader: &dyn Downloader, remote: &Remote, file_name: &str, target: &Path) -> Result<()> {
    let part = target.with_extension("part");
    let mut last = None;
    for base in remote.urls {
        let url = format!("{base}{file_name}");
        let result = (|| -> Result<()> {
            let mut out = fs::File::create(&part)?;
            downloader.download(&url, &mut out)?;
            out.sync_all()?;
            drop(out);
            verify(&part, remote.check, remote.gzipped)
                .map_err(|message| Error::Integrity { path: target.to_path_buf(), message })?;
            fs::rename(&part, target)?;
            Ok(())
        })();
        match result {
            Ok(()) => return Ok(()),
            Err(e) => {
                let _ = fs::remove_file(&part);
                last = Some(e);
            }
        }
    }
    Err(last.unwrap_or_else(|| Error::Network(format!("no source for {file_name}"))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::RefCell;

    /// Serves a fixed WDBC body and records requested URLs.
    struct Fake {
        body: Vec<u8>,
        calls: RefCell<Vec<String>>,
    }

    impl Downloader for Fake {
        fn download(&self, url: &str, out: &mut dyn Write) -> Result<u64> {
            self.calls.borrow_mut().push(url.to_string());
            out.write_all(&self.body)?;
            Ok(self.body.len() as u64)
        }
    }

    fn wdbc_text(rows: usize) -> String {
        (0..rows)
            .map(|i| {
                let feats = vec!["1.0"; 30].join(",");
                format!("{i},{},{feats}\n", if i % 3 == 0 { "M" } else { "B" })
            })
            .collect()
    }

    #[test]
    fn downloads_once_then_uses_cache() {
        let dir = tempfile::tempdir().unwrap();
        let fake = Fake { body: wdbc_text(569).into_bytes(), calls: RefCell::new(Vec::new()) };
        let first = fetch_with(DatasetId::Wdbc, dir.path(), &fake).unwrap();
        assert_eq!(first.files[0].1, FileStatus::Downloaded);
        assert!(fake.calls.borrow()[0].ends_with("/wdbc.data"));
        let second = fetch_with(DatasetId::Wdbc, dir.path(), &fake).unwrap();
        assert_eq!(second.downloads(), 0);
        assert_eq!(fake.calls.borrow().len(), 1);
    }

    #[test]
    fn corrupt_cache_is_replaced() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("wdbc")).unwrap();
        fs::write(dir.path().join("wdbc/wdbc.data"), wdbc_text(10)).unwrap();
        let fake = Fake { body: wdbc_text(569).into_bytes(), calls: RefCell::new(Vec::new()) };
        let report = fetch_with(DatasetId::Wdbc, dir.path(), &fake).unwrap();
        assert!(matches!(&report.files[0].1, FileStatus::Replaced { reason } if reason.contains("10 rows")));
    }

    #[test]
    fn bad_download_is_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let fake = Fake { body: b"garbage".to_vec(), calls: RefCell::new(Vec::new()) };
        let err = fetch_with(DatasetId::Wdbc, dir.path(), &fake).unwrap_err();
        assert!(matches!(err, Error::Integrity { .. }));
        assert!(!dir.path().join("wdbc/wdbc.data").exists());
    }

    #[test]
    fn short_idx_download_rejected_for_every_mirror() {
        let dir = tempfile::tempdir().unwrap();
        let fake = Fake { body: vec![0; 100], calls: RefCell::new(Vec::new()) };
        let err = fetch_with(DatasetId::Mnist, dir.path(), &fake).unwrap_err();
        assert!(matches!(err, Error::Integrity { .. }));
        assert_eq!(fake.calls.borrow().len(), MNIST_URLS.len());
    }
}
