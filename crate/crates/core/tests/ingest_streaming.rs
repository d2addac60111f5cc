//! Peak-memory check for revision streaming; kept in its own binary so no
//! other test shares the process high-water mark.

#![cfg(target_os = "linux")]

use std::io::{BufWriter, Write};

use drift_eval::ingest::RevisionStream;

const PAGES: usize = 3000;
const REVISIONS: usize = 5;
const REVISION_BYTES: usize = 4096;

fn peak_rss_kib() -> u64 {
    let status = std::fs::read_to_string("/proc/self/status").unwrap();
    status
        .lines()
        .find_map(|l| l.strip_prefix("VmHWM:"))
        .and_then(|v| v.trim().trim_end_matches("kB").trim().parse().ok())
        .unwrap()
}

#[test]
fn peak_memory_is_independent_of_dump_size() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dump.xml");
    let mut w = BufWriter::new(std::fs::File::create(&path).unwrap());
    writeln!(w, "<mediawiki>").unwrap();
    let body: String = "The [[river]] flows past the '''mill''' and on to the sea. "
        .repeat(REVISION_BYTES / 60);
    for p in 0..PAGES {
        writeln!(w, "<page><title>Page {p}</title><ns>0</ns><id>{p}</id>").unwrap();
        for r in 0..REVISIONS {
            writeln!(
                w,
                "<revision><id>{}</id><timestamp>2020-01-01T00:00:{r:02}Z</timestamp><text>{body} rev {r}</text></revision>",
                p * REVISIONS + r + 1
            )
            .unwrap();
        }
        writeln!(w, "</page>").unwrap();
    }
    writeln!(w, "</mediawiki>").unwrap();
    drop(w);
    let dump_kib = std::fs::metadata(&path).unwrap().len() / 1024;

    let before = peak_rss_kib();
    let mut pages = 0;
    let mut revisions = 0;
    for page in RevisionStream::open(&path).unwrap() {
        let page = page.unwrap();
        pages += 1;
        revisions += page.revisions.len();
    }
    let growth = peak_rss_kib().saturating_sub(before);

    assert_eq!(pages, PAGES);
    assert_eq!(revisions, PAGES * REVISIONS);
    assert!(dump_kib > 50 * 1024, "dump only {dump_kib} KiB");
    assert!(growth < dump_kib / 4, "peak grew {growth} KiB while streaming a {dump_kib} KiB dump");
}
