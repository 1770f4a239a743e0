//! Package directory layout and integrity checks.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::raster::{read_existing, BinaryMask, Image, TextureMap};
use crate::rig::{validate_params, ParamVector, Rig, BASE_FACE};

pub const RIG_FILE: &str = "rig.json";
pub const ATLAS_FILE: &str = "atlas.png";
pub const PARAMS_FILE: &str = "params.json";
pub const MASK_FILE: &str = "repaint_mask.png";
pub const PROVENANCE_FILE: &str = "provenance.json";

const HASHED_FILES: [&str; 4] = [RIG_FILE, ATLAS_FILE, PARAMS_FILE, MASK_FILE];

/// Local deviation (8-bit levels) above which a repainted pixel is dirty.
pub const DIRTY_LEVELS: f64 = 2.0;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub tool_version: String,
    /// Seconds since the Unix epoch; `SOURCE_DATE_EPOCH` when set.
    pub created_unix: u64,
    /// Hashes of the inputs the package was built from, by role.
    pub inputs: BTreeMap<String, String>,
    pub model_sha256: Option<String>,
    /// Hashes of the package files, filled in on save.
    #[serde(default)]
    pub files: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(inputs: BTreeMap<String, String>, model_sha256: Option<String>) -> Provenance {
        Provenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix: build_timestamp(),
            inputs,
            model_sha256,
            files: BTreeMap::new(),
        }
    }
}

/// `SOURCE_DATE_EPOCH` if set and numeric, else the current time.
pub fn build_timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or_else(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        })
}

/// A finished character: rig, painted atlas, fitted weights, repaint mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPackage {
    pub rig: Rig,
    pub atlas: Image,
    pub params: ParamVector,
    /// Canvas-space mask the base face was repainted under.
    pub repaint_mask: BinaryMask,
    pub provenance: Provenance,
}

impl ModelPackage {
    /// Writes every file, then `provenance.json` with their hashes.
    pub fn save(&mut self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let params =
            serde_json::to_vec_pretty(&self.params.to_json(&self.rig)).expect("params serialize");
        let contents: [(&str, Vec<u8>); 4] = [
            (RIG_FILE, self.rig.to_json().into_bytes()),
            (ATLAS_FILE, self.atlas.encode_png()),
            (PARAMS_FILE, params),
            (MASK_FILE, self.repaint_mask.encode_png()),
        ];
        self.provenance.files.clear();
        for (name, bytes) in &contents {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            self.provenance
                .files
                .insert(name.to_string(), sha256_hex(bytes));
        }
        let path = dir.join(PROVENANCE_FILE);
        let text = serde_json::to_vec_pretty(&self.provenance).expect("provenance serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Reads a package, checking every file against its recorded hash.
    pub fn load(dir: &Path) -> Result<ModelPackage> {
        let prov_path = dir.join(PROVENANCE_FILE);
        let provenance: Provenance =
            serde_json::from_slice(&read_existing(&prov_path)?).map_err(|e| Error::Parse {
                file: prov_path.display().to_string(),
                message: e.to_string(),
            })?;
        let mut files = BTreeMap::new();
        for name in HASHED_FILES {
            let path = dir.join(name);
            let bytes = read_existing(&path)?;
            let found = sha256_hex(&bytes);
            let expected = provenance.files.get(name).cloned().unwrap_or_default();
            if found != expected {
                return Err(Error::HashMismatch {
                    file: name.to_string(),
                    expected,
                    found,
                });
            }
            files.insert(name, bytes);
        }
        let rig_text = String::from_utf8(files[RIG_FILE].clone()).map_err(|e| Error::Parse {
            file: RIG_FILE.into(),
            message: e.to_string(),
        })?;
        let rig = Rig::from_json(&rig_text)?;
        let atlas = Image::decode_png(&files[ATLAS_FILE], &dir.join(ATLAS_FILE))?;
        let params_json: serde_json::Value =
            serde_json::from_slice(&files[PARAMS_FILE]).map_err(|e| Error::Parse {
                file: PARAMS_FILE.into(),
                message: e.to_string(),
            })?;
        let params = ParamVector::from_json(&params_json)?;
        let repaint_mask = BinaryMask::decode_png(&files[MASK_FILE], &dir.join(MASK_FILE))?;
        Ok(ModelPackage {
            rig,
            atlas,
            params,
            repaint_mask,
            provenance,
        })
    }

    /// Base-face texels under the repaint mask whose value departs from
    /// the mean of their in-bounds 4-neighbours by more than
    /// [`DIRTY_LEVELS`] in some channel.
    pub fn dirty_texels(&self) -> Result<Vec<(u32, u32)>> {
        let view = self
            .rig
            .layer(BASE_FACE)
            .ok_or_else(|| Error::UnknownLayer(BASE_FACE.into()))?;
        let map = TextureMap::new(&view);
        let r = map.rect;
        let base = self.atlas.crop(r)?;
        let mask = texture_space_mask(&self.repaint_mask, &map);
        let mut dirty = Vec::new();
        for v in 0..r.h {
            for u in 0..r.w {
                if !mask.get(u, v) {
                    continue;
                }
                let mut acc = [0.0f64; 4];
                let mut n = 0.0;
                for (du, dv) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (x, y) = (u as i64 + du, v as i64 + dv);
                    if x < 0 || y < 0 || x >= r.w as i64 || y >= r.h as i64 {
                        continue;
                    }
                    let px = base.get(x as u32, y as u32);
                    for c in 0..4 {
                        acc[c] += px[c] as f64;
                    }
                    n += 1.0;
                }
                let px = base.get(u, v);
                if (0..4).any(|c| (px[c] as f64 - acc[c] / n).abs() > DIRTY_LEVELS) {
                    dirty.push((u, v));
                }
            }
        }
        Ok(dirty)
    }
}

/// Canvas mask pulled back into a layer's texture rect (rect-local coords).
pub fn texture_space_mask(canvas_mask: &BinaryMask, map: &TextureMap) -> BinaryMask {
    let r = map.rect;
    let (w, h) = canvas_mask.dims();
    BinaryMask::from_fn(r.w, r.h, |u, v| {
        let c = map.to_canvas(crate::geom::Point::new((r.x + u) as f64, (r.y + v) as f64));
        let (x, y) = (c.x.round(), c.y.round());
        x >= 0.0 && y >= 0.0 && x < w as f64 && y < h as f64 && canvas_mask.get(x as u32, y as u32)
    })
}

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Check {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }

    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.ok)
    }
}

/// Re-checks hashes and package invariants. Load failures (hash mismatch,
/// missing file) are returned as errors; invariant failures as report lines.
pub fn verify_package(dir: &Path) -> Result<VerifyReport> {
    let pkg = ModelPackage::load(dir)?;
    let mut checks = vec![Check {
        name: "hashes".into(),
        ok: true,
        detail: format!("{} files match provenance", HASHED_FILES.len()),
    }];
    let rig_ok = pkg.rig.validate();
    checks.push(Check {
        name: "rig".into(),
        ok: rig_ok.is_ok(),
        detail: rig_ok
            .err()
            .map(|e| e.to_string())
            .unwrap_or_else(|| "valid".into()),
    });
    let (aw, ah) = pkg.atlas.dims();
    let outside: Vec<String> = pkg
        .rig
        .layer_ids()
        .into_iter()
        .filter(|id| {
            pkg.rig
                .layer(id)
                .is_some_and(|l| !l.texture_rect.fits_within(aw, ah))
        })
        .map(str::to_string)
        .collect();
    checks.push(Check {
        name: "atlas".into(),
        ok: outside.is_empty(),
        detail: if outside.is_empty() {
            format!("{aw}x{ah} covers all texture rects")
        } else {
            format!("rects outside atlas: {}", outside.join(", "))
        },
    });
    let params = validate_params(&pkg.params, &pkg.rig);
    checks.push(Check {
        name: "params".into(),
        ok: params.is_ok(),
        detail: params
            .err()
            .map(|v| {
                v.iter()
                    .map(|x| x.to_string())
                    .collect::<Vec<_>>()
                    .join("; ")
            })
            .unwrap_or_else(|| format!("{} weights within bounds", pkg.params.len())),
    });
    let n = pkg.rig.canvas_size;
    let mask_ok = pkg.repaint_mask.dims() == (n, n);
    checks.push(Check {
        name: "repaint_mask".into(),
        ok: mask_ok,
        detail: format!(
            "{}x{} mask, {} pixels set",
            pkg.repaint_mask.width(),
            pkg.repaint_mask.height(),
            pkg.repaint_mask.count()
        ),
    });
    if mask_ok {
        let dirty = pkg.dirty_texels()?;
        checks.push(Check {
            name: "repaint".into(),
            ok: dirty.is_empty(),
            detail: match dirty.first() {
                None => "no dirty texels under the mask".into(),
                Some((u, v)) => format!("{} dirty texels, first at ({u}, {v})", dirty.len()),
            },
        });
    }
    Ok(VerifyReport { checks })
}
