//! Line-oriented experiment configs: `key = value` lines under `[section]` headers,
//! `#` comments. Keys before the first header belong to the section "".

use crate::dnmap::{DnDomain, PotentialPair};
use crate::error::{LabError, Result};
use crate::geometry::{default_box, default_shell, make_star_domain, FSpec, StarDomain};
use crate::potentials::{parse_q, parse_w, QField, WField};
use crate::sph3::Potentials;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    pub sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        let mut cur = String::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| LabError::Config(format!("line {}: unterminated section header", ln + 1)))?;
                cur = name.trim().to_string();
                cfg.sections.entry(cur.clone()).or_default();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| LabError::Config(format!("line {}: expected key = value", ln + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(LabError::Config(format!("line {}: empty key", ln + 1)));
            }
            cfg.sections.entry(cur.clone()).or_default().insert(k.to_string(), v.trim().to_string());
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::Io(format!("{}: {e}", path.display())))?;
        Config::parse(&text)
    }

    pub fn has_section(&self, s: &str) -> bool {
        self.sections.contains_key(s)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section).and_then(|m| m.get(key)).map(|s| s.as_str())
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&str> {
        self.get(section, key).ok_or_else(|| LabError::Config(format!("missing [{section}] {key}")))
    }

    pub fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| LabError::Config(format!("[{section}] {key}: bad number '{v}'"))),
        }
    }

    pub fn usize_or(&self, section: &str, key: &str, default: usize) -> Result<usize> {
        match self.get(section, key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| LabError::Config(format!("[{section}] {key}: bad integer '{v}'"))),
        }
    }
}

/// Comma-separated numbers; the list must be nonempty.
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<f64>().map_err(|_| LabError::Config(format!("bad number '{t}'"))))
        .collect::<Result<_>>()?;
    if v.is_empty() {
        return Err(LabError::Config("empty list".into()));
    }
    Ok(v)
}

/// `const:c | exp:K | trig:c0;k1,..,kn,a,b;...`
pub fn parse_fspec(s: &str) -> Result<FSpec> {
    let (kind, rest) = s.split_once(':').ok_or_else(|| LabError::Config(format!("bad f spec '{s}'")))?;
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| LabError::Config(format!("bad number '{t}'")));
    match kind.trim() {
        "const" => Ok(FSpec::Const(num(rest)?)),
        "exp" => Ok(FSpec::ExpLinear(num(rest)?)),
        "trig" => {
            let mut parts = rest.split(';');
            let c0 = num(parts.next().unwrap_or(""))?;
            let terms = parts
                .map(|p| {
                    let v = parse_list(p)?;
                    if v.len() < 3 {
                        return Err(LabError::Config(format!("bad trig term '{p}'")));
                    }
                    let n = v.len() - 2;
                    Ok((v[..n].to_vec(), v[n], v[n + 1]))
                })
                .collect::<Result<_>>()?;
            Ok(FSpec::Trig { c0, terms })
        }
        _ => Err(LabError::Config(format!("bad f spec '{s}'"))),
    }
}

/// `[domain]` with `f`, `r_max`, `n` and either `theta_box = a:b,c:d` or `half`.
pub fn domain_from_config(cfg: &Config) -> Result<StarDomain> {
    let f = parse_fspec(cfg.get("domain", "f").unwrap_or("const:1"))?;
    let r_max = cfg.f64_or("domain", "r_max", 2.0)?;
    let n = cfg.usize_or("domain", "n", 2)?;
    let theta_box = match cfg.get("domain", "theta_box") {
        Some(b) => b
            .split(',')
            .map(|iv| {
                let (a, c) = iv.split_once(':').ok_or_else(|| LabError::Config(format!("bad interval '{iv}'")))?;
                let p = |t: &str| t.trim().parse::<f64>().map_err(|_| LabError::Config(format!("bad number '{t}'")));
                Ok((p(a)?, p(c)?))
            })
            .collect::<Result<Vec<_>>>()?,
        None => default_box(n, cfg.f64_or("domain", "half", 0.4)?),
    };
    make_star_domain(f, theta_box, r_max, n)
}

/// `shell` (the default shell) or a config path.
pub fn domain_arg(s: &str) -> Result<StarDomain> {
    if s == "shell" {
        return Ok(default_shell());
    }
    domain_from_config(&Config::load(Path::new(s))?)
}

/// `ball` (radius 1, 48 nodes per axis), `shell`, or a config with `[dn]`:
/// `kind = ball|shell`, `radius`, `n` or `r0`, `r1`, `half`, `nr`, `na`.
pub fn dn_domain_arg(s: &str) -> Result<DnDomain> {
    let cfg = match s {
        "ball" => Config::default(),
        "shell" => Config::parse("[dn]\nkind = shell")?,
        path => Config::load(Path::new(path))?,
    };
    match cfg.get("dn", "kind").unwrap_or("ball") {
        "ball" => Ok(DnDomain::Ball { radius: cfg.f64_or("dn", "radius", 1.0)?, n: cfg.usize_or("dn", "n", 48)? }),
        "shell" => Ok(DnDomain::Shell {
            r0: cfg.f64_or("dn", "r0", 1.0)?,
            r1: cfg.f64_or("dn", "r1", 2.0)?,
            half: cfg.f64_or("dn", "half", 0.4)?,
            nr: cfg.usize_or("dn", "nr", 33)?,
            na: cfg.usize_or("dn", "na", 33)?,
        }),
        k => Err(LabError::Config(format!("unknown dn domain kind '{k}'"))),
    }
}

fn fields(cfg: &Config, section: &str, wk: &str, qk: &str) -> Result<(WField, QField)> {
    let w = cfg.get(section, wk).map(parse_w).transpose()?.unwrap_or(WField::Zero);
    let q = cfg.get(section, qk).map(parse_q).transpose()?.unwrap_or(QField::Const(0.0));
    Ok((w, q))
}

/// `[potential]` with `w` and `q`; missing keys mean zero.
pub fn potentials_from_config(cfg: &Config) -> Result<Potentials> {
    if !cfg.has_section("potential") {
        return Err(LabError::Config("missing [potential] section".into()));
    }
    let (w, q) = fields(cfg, "potential", "w", "q")?;
    Ok(Potentials { w, q })
}

/// `[pair]` with `w1`, `w2`, `q1`, `q2`.
pub fn pair_from_config(cfg: &Config) -> Result<PotentialPair> {
    if !cfg.has_section("pair") {
        return Err(LabError::Config("missing [pair] section".into()));
    }
    let (w1, q1) = fields(cfg, "pair", "w1", "q1")?;
    let (w2, q2) = fields(cfg, "pair", "w2", "q2")?;
    Ok(PotentialPair { w1, w2, q1, q2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_comments() {
        let c = Config::parse("top = 1\n# note\n[domain]\nf = const:1  # inline\nr_max=2.5\n\n[pair]\nw1 = zero\n").unwrap();
        assert_eq!(c.get("", "top"), Some("1"));
        assert_eq!(c.get("domain", "f"), Some("const:1"));
        assert_eq!(c.f64_or("domain", "r_max", 0.0).unwrap(), 2.5);
        assert!(c.has_section("pair"));
        assert!(Config::parse("[open\n").is_err());
        assert!(Config::parse("no equals sign\n").is_err());
        assert!(c.require("domain", "missing").is_err());
    }

    #[test]
    fn domain_from_text() {
        let c = Config::parse("[domain]\nf = exp:0.2\nr_max = 3\ntheta_box = 1.2:1.9,1.3:1.8\n").unwrap();
        let d = domain_from_config(&c).unwrap();
        assert_eq!(d.theta_box, vec![(1.2, 1.9), (1.3, 1.8)]);
        assert_eq!(d.f, FSpec::ExpLinear(0.2));
        assert!(matches!(parse_fspec("trig:0;1,0,0.1,0.0").unwrap(), FSpec::Trig { .. }));
        assert!(parse_fspec("nope").is_err());
    }

    #[test]
    fn lists() {
        assert_eq!(parse_list("0.4, 0.2,0.1").unwrap(), vec![0.4, 0.2, 0.1]);
        assert!(parse_list("").is_err());
        assert!(parse_list("a").is_err());
    }

    #[test]
    fn pair_and_potential() {
        let c = Config::parse("[pair]\nw1 = solenoidal:1,0,0,1.5,0.4\nq2 = const:2\n[potential]\nq = bump:1,0,0,0,0.3\n").unwrap();
        let p = pair_from_config(&c).unwrap();
        assert!(matches!(p.w2, WField::Zero));
        assert!(matches!(p.q2, QField::Const(v) if v == 2.0));
        assert!(matches!(potentials_from_config(&c).unwrap().q, QField::Bump { .. }));
        assert!(pair_from_config(&Config::default()).is_err());
    }
}
