use std::io::Cursor;
use std::time::Duration;

use proptest::prelude::*;

use streamgate_core::engine::StreamHandle;
use streamgate_core::gateway::{PhaseTimings, RequestOutcome, RequestStatus};
use streamgate_core::net::{read_frame, write_frame, Reply};
use streamgate_core::predicate::{Warning, WarningKind};
use streamgate_core::CacheStatus;

fn line() -> impl Strategy<Value = String> {
    "[^\r\n]{0,40}"
}

fn outcome() -> impl Strategy<Value = RequestOutcome> {
    let kinds = prop::sample::select(vec![
        WarningKind::None,
        WarningKind::PartialResult,
        WarningKind::EmptyResult,
    ]);
    (
        prop::sample::select(RequestStatus::ALL.to_vec()),
        prop::option::of(("[a-z][a-z0-9.]{0,10}", "[a-z0-9_-]{1,16}")),
        prop::option::of((kinds, line())),
        prop::option::of(line()),
        [0u64..1 << 40, 0u64..1 << 40, 0u64..1 << 40, 0u64..1 << 40],
    )
        .prop_map(|(status, handle, warning, detail, t)| RequestOutcome {
            status,
            handle: handle.map(|(host, id)| StreamHandle::new(&host, &id)),
            warning: warning.map(|(k, e)| Warning::new(k, e)),
            detail,
            timings: PhaseTimings {
                decision: Duration::from_nanos(t[0]),
                merge: Duration::from_nanos(t[1]),
                deploy: Duration::from_nanos(t[2]),
                total: Duration::from_nanos(t[3]),
            },
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn replies_round_trip(outcome in outcome(), cache in prop::option::of(prop_oneof![Just(CacheStatus::Hit), Just(CacheStatus::Miss)])) {
        let reply = Reply { outcome, cache };
        prop_assert_eq!(Reply::decode(&reply.encode()).unwrap(), reply);
    }

    #[test]
    fn frames_round_trip(docs in prop::collection::vec("\\PC{0,200}", 0..8)) {
        let mut buf = Vec::new();
        for d in &docs {
            write_frame(&mut buf, d).unwrap();
        }
        let mut r = Cursor::new(buf);
        for d in &docs {
            let got = read_frame(&mut r).unwrap();
            prop_assert_eq!(got.as_deref(), Some(d.as_str()));
        }
        prop_assert_eq!(read_frame(&mut r).unwrap(), None);
    }

    #[test]
    fn truncated_frames_are_errors(doc in "\\PC{1,100}", cut in 1usize..100) {
        let mut buf = Vec::new();
        write_frame(&mut buf, &doc).unwrap();
        let cut = cut.min(buf.len() - 1);
        prop_assert!(read_frame(&mut Cursor::new(&buf[..cut])).is_err());
    }
}
