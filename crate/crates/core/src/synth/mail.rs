//! Scripted mail dialogues: SMTP delivery attempts covering every stage
//! and failure cause, an engineered failure-cause corpus with an exact
//! designed split, and a fixed IMAP/POP3 retrieval fixture.

use rand::seq::SliceRandom;

use crate::capture::{Direction, Flow, Transport};
use crate::mailanal::{DeliveryStage, FailureCause};
use crate::synth::{endpoint, make_flow};

use Direction::{Down, Up};

/// Build one mail flow from CRLF-terminated dialogue lines, 10 ms apart.
/// `index` varies the client address so fixture flows have distinct keys.
pub fn mail_dialogue_flow(index: u32, dst_port: u16, lines: &[(Direction, String)]) -> Flow {
    let script: Vec<(Direction, f64, Vec<u8>)> = lines
        .iter()
        .enumerate()
        .map(|(i, (dir, text))| (*dir, 0.01 * i as f64, format!("{text}\r\n").into_bytes()))
        .collect();
    let borrowed: Vec<(Direction, f64, &[u8])> =
        script.iter().map(|(d, t, p)| (*d, *t, p.as_slice())).collect();
    make_flow(
        Transport::Tcp,
        endpoint(&format!(
            "10.2.{}.{}:{}",
            index / 250,
            index % 250,
            40000 + (index % 20000) as u16
        )),
        endpoint(&format!("198.51.100.{}:{}", 20 + index % 4, dst_port)),
        5000.0 + index as f64,
        &borrowed,
    )
}

fn own<'a>(lines: impl IntoIterator<Item = (Direction, &'a str)>) -> Vec<(Direction, String)> {
    lines.into_iter().map(|(d, s)| (d, s.to_string())).collect()
}

/// A complete accepted delivery dialogue ending in `final_reply`.
fn full_dialogue(index: u32, body: &str, final_reply: &str) -> Vec<(Direction, String)> {
    let mut lines = vec![
        (Down, "220 mx.dest.example ESMTP".to_string()),
        (Up, format!("EHLO client{index}.relay.example")),
        (Down, "250 mx.dest.example".to_string()),
        (Up, format!("MAIL FROM:<sender{index}@spam.example>")),
        (Down, "250 2.1.0 OK".to_string()),
        (Up, format!("RCPT TO:<victim{index}@dest.example>")),
        (Down, "250 2.1.5 OK".to_string()),
        (Up, "DATA".to_string()),
        (Down, "354 Go ahead".to_string()),
    ];
    for body_line in body.lines() {
        lines.push((Up, body_line.to_string()));
    }
    lines.push((Up, ".".to_string()));
    lines.push((Down, final_reply.to_string()));
    lines
}

/// Scripted SMTP suite with hand-derived expectations: every delivery
/// stage appears, every failure cause appears, and the rejection texts
/// include the phrases real servers use ("unsolicited mail", "block
/// list").
pub fn smtp_scripted_suite() -> Vec<(Flow, DeliveryStage, FailureCause)> {
    let mut suite = Vec::new();
    let mut push = |lines: Vec<(Direction, String)>, stage, cause| {
        let index = suite.len() as u32;
        suite.push((mail_dialogue_flow(index, 25, &lines), stage, cause));
    };

    push(
        own([(Down, "554 No SMTP service here")]),
        DeliveryStage::RejectedBeforeHelo,
        FailureCause::None,
    );
    push(
        own([(
            Down,
            "554 Connection refused: part of their network is on our block list",
        )]),
        DeliveryStage::RejectedBeforeHelo,
        FailureCause::IpBlocklist,
    );
    push(
        own([
            (Down, "220 mx.dest.example ESMTP"),
            (Up, "EHLO client2.relay.example"),
            (Down, "250 mx.dest.example"),
            (Up, "MAIL FROM:<sender2@spam.example>"),
        ]),
        DeliveryStage::ClosedBeforeRcpt,
        FailureCause::None,
    );
    push(
        own([
            (Down, "220 mx.dest.example ESMTP"),
            (Up, "EHLO client3.relay.example"),
            (Down, "250 mx.dest.example"),
            (Up, "MAIL FROM:<sender3@spam.example>"),
            (Down, "450 The mail server has been temporarily rate limited due to IP reputation"),
        ]),
        DeliveryStage::ClosedBeforeRcpt,
        FailureCause::IpBlocklist,
    );
    push(
        full_dialogue(
            4,
            "Subject: offer\r\n\r\nbuy now",
            "550 Please contact your Internet service provider since part of their network is on our block list",
        ),
        DeliveryStage::RejectedAfterData,
        FailureCause::IpBlocklist,
    );
    push(
        full_dialogue(
            5,
            "Subject: offer\r\n\r\nbuy now",
            "550 Our system has detected that this message is likely unsolicited mail.",
        ),
        DeliveryStage::RejectedAfterData,
        FailureCause::ContentFilter,
    );
    push(
        full_dialogue(
            6,
            "Subject: offer\r\n\r\nbuy now",
            "554 5.7.1 This message fails authentication checks",
        ),
        DeliveryStage::RejectedAfterData,
        FailureCause::AuthFailure,
    );
    push(
        full_dialogue(
            7,
            "Subject: hello\r\n\r\nthe password is: =F0=9D=9F=BF=F0=9D=9F=B9=F0=9D=9F=B8=F0=9D=9F=B9",
            "250 2.0.0 OK accepted",
        ),
        DeliveryStage::Delivered,
        FailureCause::None,
    );
    suite
}

/// Failure-cause rejection line for each engineered bucket. The first
/// three rotate through phrases matching the bundled rules; the last
/// matches none of them.
fn cause_reply(cause: FailureCause, variant: u64) -> &'static str {
    match cause {
        FailureCause::IpBlocklist => {
            if variant % 2 == 0 {
                "550 Please contact your Internet service provider since part of their network is on our block list"
            } else {
                "450 The mail server has been temporarily rate limited due to IP reputation"
            }
        }
        FailureCause::ContentFilter => {
            if variant % 2 == 0 {
                "550 Our system has detected that this message is likely unsolicited mail."
            } else {
                "550 Our system has detected an unusual rate of unsolicited mail originating from your IP address"
            }
        }
        FailureCause::AuthFailure => "554 5.7.1 This message fails authentication checks",
        FailureCause::None => "550 5.1.1 Requested action not taken: mailbox unavailable",
    }
}

/// Counts designed into [`smtp_cause_corpus`]: ip-blocklist,
/// content-filter, auth-failure, unclassified. Over the 10000 failures
/// the first three are exactly 30.19%, 69.49%, and 0.31%.
pub const CAUSE_CORPUS_FAILURES: [u64; 4] = [3019, 6949, 31, 1];
pub const CAUSE_CORPUS_DELIVERED: u64 = 100;

/// Engineered SMTP corpus: 10000 failed deliveries with a designed cause
/// split plus [`CAUSE_CORPUS_DELIVERED`] successes, shuffled by `seed`.
pub fn smtp_cause_corpus(seed: u64) -> Vec<Flow> {
    let mut flows = Vec::new();
    let mut index = 0u32;
    let causes = [
        FailureCause::IpBlocklist,
        FailureCause::ContentFilter,
        FailureCause::AuthFailure,
        FailureCause::None,
    ];
    for (cause, count) in causes.into_iter().zip(CAUSE_CORPUS_FAILURES) {
        for variant in 0..count {
            let lines = full_dialogue(
                index,
                "Subject: offer\r\n\r\nlimited time deal, act now",
                cause_reply(cause, variant),
            );
            flows.push(mail_dialogue_flow(index, 25, &lines));
            index += 1;
        }
    }
    for _ in 0..CAUSE_CORPUS_DELIVERED {
        let lines = full_dialogue(
            index,
            "Subject: hello\r\n\r\nthe password is: =F0=9D=9F=BF=F0=9D=9F=B9=F0=9D=9F=B8=F0=9D=9F=B9",
            "250 2.0.0 OK accepted",
        );
        flows.push(mail_dialogue_flow(index, 25, &lines));
        index += 1;
    }
    let mut rng = super::rng(seed);
    flows.shuffle(&mut rng);
    flows
}

/// Retrieval fixture: 21 sessions over 21 distinct accounts, 11 of which
/// log in successfully (6 POP3, 5 IMAP), retrieving 10 messages total.
pub fn retrieval_fixture() -> Vec<Flow> {
    let mut flows = Vec::new();
    let mut index = 100u32;

    // 6 successful POP3 accounts retrieving 0..=2 messages each (7 total).
    for i in 0..6u32 {
        let retrieve = i % 3;
        let mut lines = vec![
            (Down, "+OK POP3 server ready".to_string()),
            (Up, format!("USER pop-good-{i}@dest.example")),
            (Down, "+OK".to_string()),
            (Up, format!("PASS pw-{i}")),
            (Down, "+OK logged in".to_string()),
        ];
        for n in 0..retrieve {
            lines.push((Up, format!("RETR {}", n + 1)));
            lines.push((Down, "+OK message follows".to_string()));
            lines.push((Down, "Subject: kept on the server".to_string()));
            lines.push((Down, ".".to_string()));
        }
        lines.push((Up, "QUIT".to_string()));
        lines.push((Down, "+OK bye".to_string()));
        flows.push(mail_dialogue_flow(index, 110, &lines));
        index += 1;
    }
    // 5 failed POP3 accounts.
    for i in 0..5u32 {
        let lines = vec![
            (Down, "+OK POP3 server ready".to_string()),
            (Up, format!("USER pop-bad-{i}@dest.example")),
            (Down, "+OK".to_string()),
            (Up, format!("PASS wrong-{i}")),
            (Down, "-ERR invalid credentials".to_string()),
            (Up, "QUIT".to_string()),
            (Down, "+OK bye".to_string()),
        ];
        flows.push(mail_dialogue_flow(index, 110, &lines));
        index += 1;
    }
    // 5 successful IMAP accounts retrieving 0..=2 messages each (6 total).
    for i in 0..5u32 {
        let retrieve = i % 3;
        let mut lines = vec![
            (Down, "* OK IMAP4rev1 ready".to_string()),
            (Up, format!("a1 LOGIN imap-good-{i}@dest.example pw-{i}")),
            (Down, "a1 OK LOGIN completed".to_string()),
        ];
        for n in 0..retrieve {
            lines.push((Up, format!("a{} FETCH {} BODY[]", n + 2, n + 1)));
            lines.push((Down, format!("* {} FETCH (BODY[] {{12}}", n + 1)));
            lines.push((Down, format!("a{} OK FETCH completed", n + 2)));
        }
        lines.push((Up, "a9 LOGOUT".to_string()));
        lines.push((Down, "a9 OK bye".to_string()));
        flows.push(mail_dialogue_flow(index, 143, &lines));
        index += 1;
    }
    // 5 failed IMAP accounts.
    for i in 0..5u32 {
        let lines = vec![
            (Down, "* OK IMAP4rev1 ready".to_string()),
            (Up, format!("a1 LOGIN imap-bad-{i}@dest.example wrong")),
            (Down, "a1 NO [AUTHENTICATIONFAILED] Authentication failed".to_string()),
            (Up, "a2 LOGOUT".to_string()),
            (Down, "a2 OK bye".to_string()),
        ];
        flows.push(mail_dialogue_flow(index, 143, &lines));
        index += 1;
    }
    flows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mailanal::{
        parse_mail_retrieval, parse_smtp_session, retrieval_report, FailureRules,
    };

    #[test]
    fn scripted_suite_covers_every_stage_and_cause() {
        let suite = smtp_scripted_suite();
        for stage in DeliveryStage::ALL {
            assert!(suite.iter().any(|(_, s, _)| *s == stage), "missing {stage:?}");
        }
        for cause in [
            FailureCause::IpBlocklist,
            FailureCause::ContentFilter,
            FailureCause::AuthFailure,
        ] {
            assert!(suite.iter().any(|(_, _, c)| *c == cause), "missing {cause:?}");
        }
        let texts: Vec<String> = suite
            .iter()
            .flat_map(|(flow, _, _)| {
                flow.packets.iter().map(|p| String::from_utf8_lossy(&p.payload).into_owned())
            })
            .collect();
        assert!(texts.iter().any(|t| t.contains("unsolicited mail")));
        assert!(texts.iter().any(|t| t.contains("block list")));
    }

    #[test]
    fn cause_corpus_has_the_designed_shape() {
        let flows = smtp_cause_corpus(11);
        assert_eq!(
            flows.len() as u64,
            CAUSE_CORPUS_FAILURES.iter().sum::<u64>() + CAUSE_CORPUS_DELIVERED
        );
        let rules = FailureRules::bundled();
        let sample = parse_smtp_session(&flows[0], &rules);
        assert!(sample.client_fqdn.is_some());
    }

    #[test]
    fn retrieval_fixture_reads_fifty_two_point_three_eight_percent() {
        let flows = retrieval_fixture();
        assert_eq!(flows.len(), 21);
        let sessions: Vec<_> =
            flows.iter().map(|f| parse_mail_retrieval(f).expect("unambiguous")).collect();
        let report = retrieval_report(&sessions, 0);
        assert_eq!(report.sessions, 21);
        assert_eq!(report.accounts, 21);
        assert_eq!(report.successful_accounts, 11);
        assert_eq!(report.retrieved_messages, 10);
        assert_eq!(format!("{:.2}", report.success_percent()), "52.38");
    }
}
