use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use satsynth::image::{decode_png_gray, decode_png_rgb, encode_png_gray, encode_png_rgb, sha256_hex, write_atomic, Bitmap};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::types::{Job, SessionRecord};

/// Content-addressed PNG artifacts plus job and session records under
/// `<data_root>/service`. Every file goes through write-then-rename.
#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

pub fn is_digest(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

fn invalid(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

impl Store {
    pub fn open(data_root: &Path) -> io::Result<Self> {
        let root = data_root.join("service");
        for sub in ["artifacts", "jobs", "sessions"] {
            fs::create_dir_all(root.join(sub))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn artifact_path(&self, digest: &str) -> PathBuf {
        self.root.join("artifacts").join(format!("{digest}.png"))
    }

    pub fn put_bytes(&self, png: &[u8]) -> io::Result<String> {
        let digest = sha256_hex(png);
        let path = self.artifact_path(&digest);
        if !path.exists() {
            write_atomic(&path, png)?;
        }
        Ok(digest)
    }

    pub fn put_rgb(&self, img: &RgbImage) -> io::Result<String> {
        self.put_bytes(&encode_png_rgb(img))
    }

    pub fn put_mask(&self, mask: &Bitmap) -> io::Result<String> {
        self.put_bytes(&encode_png_gray(&mask.to_gray()))
    }

    pub fn get(&self, digest: &str) -> io::Result<Option<Vec<u8>>> {
        if !is_digest(digest) {
            return Ok(None);
        }
        match fs::read(self.artifact_path(digest)) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn require(&self, digest: &str) -> io::Result<Vec<u8>> {
        self.get(digest)?.ok_or_else(|| invalid(format!("artifact {digest} missing")))
    }

    pub fn load_rgb(&self, digest: &str) -> io::Result<RgbImage> {
        decode_png_rgb(&self.require(digest)?).map_err(|e| invalid(e.to_string()))
    }

    pub fn load_mask(&self, digest: &str) -> io::Result<Bitmap> {
        let gray: GrayImage = decode_png_gray(&self.require(digest)?).map_err(|e| invalid(e.to_string()))?;
        Ok(Bitmap::from_gray(&gray))
    }

    fn put_json<T: Serialize>(&self, dir: &str, id: &str, value: &T) -> io::Result<()> {
        let bytes = serde_json::to_vec_pretty(value).map_err(|e| invalid(e.to_string()))?;
        write_atomic(&self.root.join(dir).join(format!("{id}.json")), &bytes)
    }

    fn load_all<T: DeserializeOwned>(&self, dir: &str) -> io::Result<Vec<T>> {
        let mut out = Vec::new();
        let mut paths: Vec<PathBuf> = fs::read_dir(self.root.join(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for p in paths {
            let bytes = fs::read(&p)?;
            out.push(serde_json::from_slice(&bytes).map_err(|e| invalid(format!("{}: {e}", p.display())))?);
        }
        Ok(out)
    }

    pub fn save_job(&self, job: &Job) -> io::Result<()> {
        self.put_json("jobs", &job.id, job)
    }

    pub fn save_session(&self, rec: &SessionRecord) -> io::Result<()> {
        self.put_json("sessions", &rec.id, rec)
    }

    pub fn load_jobs(&self) -> io::Result<Vec<Job>> {
        self.load_all("jobs")
    }

    pub fn load_sessions(&self) -> io::Result<Vec<SessionRecord>> {
        self.load_all("sessions")
    }
}
