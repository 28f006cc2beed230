//! Synthetic labeled corpus with planted security vocabulary.

#![allow(dead_code)]

use chrono::{Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srtriage::corpus::{Document, Label, Source};

const PRODUCTS: &[&str] = &[
    "libpng", "openssl", "nginx", "curl", "gitlab", "wordpress", "tomcat", "kubernetes", "redis",
    "postgres", "jenkins", "firefox", "busybox", "samba", "exim", "drupal",
];

const COMPONENTS: &[&str] = &[
    "parser", "scheduler", "renderer", "settings page", "upload handler", "login form",
    "config loader", "cache layer", "api endpoint", "cli tool", "dashboard", "plugin manager",
    "export module", "search index", "session store", "template engine",
];

const SR_TEMPLATES: &[&str] = &[
    "Buffer overflow in the {c} of {p} allows remote attackers to execute arbitrary code via a crafted {x}.",
    "Cross-site scripting vulnerability in the {c} of {p} allows remote attackers to inject arbitrary web script via the {x} parameter.",
    "SQL injection in the {c} of {p} allows authenticated attackers to execute arbitrary SQL commands via a malicious {x}.",
    "Use-after-free in {p} {c} lets attackers cause a denial of service or possibly gain privileges through a crafted {x}.",
    "Improper authentication in the {c} of {p} allows attackers to bypass access restrictions and escalate privileges via {x}.",
    "Path traversal in the {p} {c} permits unauthenticated attackers to read arbitrary files through a crafted {x}.",
    "Integer overflow in {p} {c} leads to heap memory corruption and remote code execution via a malformed {x}.",
    "Cross-site request forgery in the {c} of {p} allows attackers to hijack sessions of administrators via {x}.",
    "Sensitive credentials are leaked by the {c} of {p}, exposing passwords and tokens to unprivileged attackers via {x}.",
    "Command injection in the {p} {c} allows attackers to run arbitrary shell commands via a crafted {x}.",
];

const NEUTRAL_TEMPLATES: &[&str] = &[
    "The {c} of {p} renders the wrong column width after resizing the {x} window.",
    "Add an option to the {p} {c} so users can sort the {x} list alphabetically.",
    "Typo in the documentation of the {c} in {p}; the {x} example is missing a comma.",
    "The {p} {c} is slow when the {x} contains thousands of entries, please improve performance.",
    "Upgrade the {c} of {p} to the latest dependency release and update the {x} changelog.",
    "Dark mode colors in the {p} {c} look washed out on the {x} panel.",
    "Translate the {c} labels of {p} into German and French, including the {x} tooltip.",
    "Unit tests for the {p} {c} fail intermittently on the nightly build of the {x} target.",
    "Refactor the {c} in {p} to remove duplicated helper functions around {x} formatting.",
    "Feature request: allow exporting the {p} {c} report as a spreadsheet with {x} totals.",
];

const SR_INPUTS: &[&str] = &[
    "request header", "packet", "image file", "archive", "query string", "cookie", "url",
    "xml document", "payload", "certificate",
];

const NEUTRAL_INPUTS: &[&str] = &[
    "sidebar", "table", "preferences", "menu", "footer", "chart", "calendar", "toolbar",
    "status bar", "summary",
];

fn fill(template: &str, rng: &mut ChaCha8Rng, inputs: &[&str]) -> String {
    template
        .replace("{p}", PRODUCTS.choose(rng).unwrap())
        .replace("{c}", COMPONENTS.choose(rng).unwrap())
        .replace("{x}", inputs.choose(rng).unwrap())
}

/// `n` documents, half SR, with distinct daily timestamps in random label order.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<Label> = (0..n).map(|i| if i < n / 2 { Label::Sr } else { Label::NonSr }).collect();
    labels.shuffle(&mut rng);
    let start = Utc.with_ymd_and_hms(2015, 1, 1, 0, 0, 0).unwrap();
    labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let mut text = match label {
                Label::Sr => fill(SR_TEMPLATES.choose(&mut rng).unwrap(), &mut rng, SR_INPUTS),
                Label::NonSr => fill(NEUTRAL_TEMPLATES.choose(&mut rng).unwrap(), &mut rng, NEUTRAL_INPUTS),
            };
            // a second sentence from either class blurs the boundary a little
            if rng.gen_bool(0.3) {
                text.push(' ');
                text.push_str(&fill(NEUTRAL_TEMPLATES.choose(&mut rng).unwrap(), &mut rng, NEUTRAL_INPUTS));
            }
            let source = if rng.gen_bool(0.5) { Source::GitHubIssue } else { Source::GitLabIssue };
            let created = start + Duration::hours(24 * i as i64 + rng.gen_range(0..12));
            Document::new(format!("syn{i:04}"), text, Some(label), Some(created), source).unwrap()
        })
        .collect()
}
