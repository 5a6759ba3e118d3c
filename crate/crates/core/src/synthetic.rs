//! Seeded synthetic support-ticket corpus.
//!
//! Six supply-chain topics with two subtopics each. Topic and subtopic
//! keywords are disjoint across the lexicon so scripted agents can recover
//! the ground truth from ticket text. Comment wording is kept apart from
//! titles and descriptions.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AuthorRole, Comment, Ticket, TicketStatus};
use crate::rag::tokenize;

#[derive(Debug)]
pub struct Subtopic {
    pub name: &'static str,
    pub description: &'static str,
    pub keywords: &'static [&'static str],
    pub titles: &'static [&'static str],
    pub descriptions: &'static [&'static str],
    pub resolutions: &'static [&'static str],
}

#[derive(Debug)]
pub struct Topic {
    pub name: &'static str,
    pub description: &'static str,
    pub subtopics: [Subtopic; 2],
}

impl Topic {
    pub fn keywords(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.subtopics.iter().flat_map(|s| s.keywords.iter().copied())
    }
}

static LEXICON: [Topic; 6] = [
    Topic {
        name: "Site Access",
        description: "Badge entry and system sign-in problems at sites",
        subtopics: [
            Subtopic {
                name: "Badge Provisioning",
                description: "Badges denied or inactive at site doors",
                keywords: &["badge", "turnstile"],
                titles: &[
                    "Badge denied at {site} entrance",
                    "New hire badge inactive at {site}",
                    "Turnstile rejects badge at {site}",
                ],
                descriptions: &[
                    "My badge is denied at the {site} dock entrance since this morning. Reference {ref}.",
                    "The badge for a new associate at {site} shows inactive when scanned at the turnstile. Ref {ref}.",
                    "Turnstile at {site} flashes red for my badge even though my shift starts now. Ref {ref}.",
                ],
                resolutions: &[
                    "Re-provisioned the credential in SecureGate and resynced the reader; a fresh tap now works.",
                    "Security desk reissued the card and linked the employee record inside SecureGate.",
                    "Expired shift window on the credential was extended in SecureGate by the security desk.",
                ],
            },
            Subtopic {
                name: "System Login",
                description: "Users unable to sign in to site systems",
                keywords: &["login", "password"],
                titles: &[
                    "Cannot login to WMS at {site}",
                    "Password reset loop for {site} supervisor",
                    "Login locked after password change at {site}",
                ],
                descriptions: &[
                    "Every login attempt to WMS from {site} fails with an invalid credentials message. Ref {ref}.",
                    "The password reset page keeps sending me back to the start for my {site} account. Ref {ref}.",
                    "After changing my password the login screen at {site} says the account is locked. Ref {ref}.",
                ],
                resolutions: &[
                    "Cleared the stuck SSO session in IdentityHub; user signed in after purging browser cache.",
                    "Reset MFA enrollment through IdentityHub and sign-in succeeded on the next attempt.",
                    "Unlocked the directory profile in IdentityHub and synced it with the WMS user table.",
                ],
            },
        ],
    },
    Topic {
        name: "Inventory Discrepancy",
        description: "System stock levels that disagree with physical stock",
        subtopics: [
            Subtopic {
                name: "Cycle Count Variance",
                description: "Variances raised by cycle counts",
                keywords: &["cycle", "variance"],
                titles: &[
                    "Cycle count variance on bin at {site}",
                    "Large variance after cycle count in {site}",
                    "Cycle count keeps flagging variance at {site}",
                ],
                descriptions: &[
                    "The cycle count for one bin at {site} shows a variance of {qty} units against the system. Ref {ref}.",
                    "Our cycle team at {site} found a variance of {qty} units that will not clear. Ref {ref}.",
                    "Each cycle count pass at {site} raises the same variance of {qty} units. Ref {ref}.",
                ],
                resolutions: &[
                    "Posted an adjustment in StockLedger after a blind recount confirmed the physical quantity.",
                    "Found units parked in a staging location; moved them back in StockLedger and the gap closed.",
                    "Reversed a duplicate putaway transaction in StockLedger that inflated the on-hand figure.",
                ],
            },
            Subtopic {
                name: "Receiving Mismatch",
                description: "Received quantities not matching advance shipping notices",
                keywords: &["receiving", "asn"],
                titles: &[
                    "Receiving quantity differs from ASN at {site}",
                    "ASN shortage during receiving at {site}",
                    "Receiving dock cannot close ASN at {site}",
                ],
                descriptions: &[
                    "Receiving at {site} counted {qty} fewer cases than the ASN lists. Ref {ref}.",
                    "The ASN for an inbound trailer at {site} shows more units than receiving found. Ref {ref}.",
                    "Receiving staff at {site} cannot close the ASN because of a {qty} unit gap. Ref {ref}.",
                ],
                resolutions: &[
                    "Vendor confirmed a short shipment; closed the notice with a shortage code in DockFlow.",
                    "Split the notice in DockFlow so the missing pallet can arrive on a later trailer.",
                    "Corrected the pack size on the item master so DockFlow converts cases to eaches properly.",
                ],
            },
        ],
    },
    Topic {
        name: "Shipment Delays",
        description: "Outbound shipments late or missing tracking",
        subtopics: [
            Subtopic {
                name: "Carrier Pickup",
                description: "Carriers missing scheduled pickups",
                keywords: &["carrier", "pickup"],
                titles: &[
                    "Carrier missed pickup at {site}",
                    "No carrier pickup for trailer at {site}",
                    "Carrier pickup window missed at {site}",
                ],
                descriptions: &[
                    "The carrier did not show for the scheduled pickup at {site} and {qty} pallets are waiting. Ref {ref}.",
                    "A loaded trailer at {site} has no carrier pickup booked for today. Ref {ref}.",
                    "The carrier arrived after the pickup window closed at {site}. Ref {ref}.",
                ],
                resolutions: &[
                    "Rebooked the load with a backup haulier through FreightDesk and flagged the lane for review.",
                    "Escalated to the haulier account manager via FreightDesk; a truck was sent within two hours.",
                    "Moved the appointment in FreightDesk and notified the customer of the revised arrival.",
                ],
            },
            Subtopic {
                name: "Tracking Updates",
                description: "Shipments with stale or missing tracking",
                keywords: &["tracking", "shipment"],
                titles: &[
                    "Tracking not updating for shipment from {site}",
                    "Shipment tracking stuck at {site}",
                    "Missing tracking number on shipment from {site}",
                ],
                descriptions: &[
                    "Tracking for a shipment that left {site} three days ago still shows label created. Ref {ref}.",
                    "The shipment from {site} has had the same tracking status for {qty} hours. Ref {ref}.",
                    "A customer shipment from {site} has no tracking number attached. Ref {ref}.",
                ],
                resolutions: &[
                    "Re-sent the EDI 214 feed from TransitView which refreshed the status events.",
                    "Haulier had not scanned at departure; TransitView updated once they added the event.",
                    "Attached the PRO number manually in TransitView and triggered a customer notification.",
                ],
            },
        ],
    },
    Topic {
        name: "Purchase Order Errors",
        description: "Problems approving purchase orders or matching invoices",
        subtopics: [
            Subtopic {
                name: "Approval Routing",
                description: "Purchase orders stuck in approval",
                keywords: &["approval", "purchase"],
                titles: &[
                    "Purchase order stuck in approval for {site}",
                    "Approval missing on purchase order for {site}",
                    "Purchase approval routed to wrong manager at {site}",
                ],
                descriptions: &[
                    "A purchase order for {site} has been pending approval for {qty} days. Ref {ref}.",
                    "The purchase order for {site} supplies shows no approval step at all. Ref {ref}.",
                    "Approval for a purchase at {site} went to a manager who left the company. Ref {ref}.",
                ],
                resolutions: &[
                    "Updated the delegation table in ProcureNet so the request routes to the acting manager.",
                    "Resubmitted the requisition in ProcureNet after fixing the cost center on line two.",
                    "Finance added the missing spend threshold rule in ProcureNet and the workflow resumed.",
                ],
            },
            Subtopic {
                name: "Invoice Mismatch",
                description: "Invoices that fail matching",
                keywords: &["invoice", "mismatch"],
                titles: &[
                    "Invoice mismatch blocks payment for {site}",
                    "Invoice price mismatch for {site} vendor",
                    "Invoice quantity mismatch at {site}",
                ],
                descriptions: &[
                    "The vendor invoice for {site} fails matching with a mismatch on unit price. Ref {ref}.",
                    "An invoice for {site} shows a price mismatch of {qty} dollars. Ref {ref}.",
                    "The invoice quantity for {site} does not equal the goods receipt, so it is on hold. Ref {ref}.",
                ],
                resolutions: &[
                    "Requested a credit memo from the vendor and released the hold in ProcureNet after it posted.",
                    "Price on the contract was outdated; buyer refreshed it in ProcureNet and matching passed.",
                    "Posted the late goods receipt so the three-way match in ProcureNet could complete.",
                ],
            },
        ],
    },
    Topic {
        name: "Label Printing",
        description: "Label printers and barcode quality issues",
        subtopics: [
            Subtopic {
                name: "Printer Offline",
                description: "Label printers not responding",
                keywords: &["printer", "offline"],
                titles: &[
                    "Label printer offline at {site} pack station",
                    "Printer shows offline at {site}",
                    "Pack station printer offline again at {site}",
                ],
                descriptions: &[
                    "The label printer at pack station {qty} in {site} shows offline. Ref {ref}.",
                    "Our thermal printer at {site} went offline after the network change. Ref {ref}.",
                    "The printer at {site} goes offline every few hours and queues jobs. Ref {ref}.",
                ],
                resolutions: &[
                    "Power cycled the unit and re-added its queue on the PrintHub server with a static IP.",
                    "Replaced the worn network cable and cleared stuck jobs from the PrintHub spooler.",
                    "Updated the driver on the PrintHub server; the device has stayed connected since.",
                ],
            },
            Subtopic {
                name: "Barcode Quality",
                description: "Barcodes that scan poorly",
                keywords: &["barcode", "unreadable"],
                titles: &[
                    "Barcode unreadable on labels from {site}",
                    "Faded barcode on shipping labels at {site}",
                    "Scanners reject barcode printed at {site}",
                ],
                descriptions: &[
                    "Labels printed at {site} have an unreadable barcode at the sorter. Ref {ref}.",
                    "The barcode on labels from {site} prints faded after {qty} labels. Ref {ref}.",
                    "Handheld scanners at {site} reject the barcode on new labels. Ref {ref}.",
                ],
                resolutions: &[
                    "Cleaned the print head and raised darkness to 22 in the PrintHub template.",
                    "Swapped the ribbon for the approved wax-resin type listed in PrintHub guidance.",
                    "Fixed the template in PrintHub so the symbol prints at 100 percent scale.",
                ],
            },
        ],
    },
    Topic {
        name: "Forecast Reports",
        description: "Demand forecast reports failing or stale",
        subtopics: [
            Subtopic {
                name: "Report Timeout",
                description: "Forecast reports timing out",
                keywords: &["timeout", "report"],
                titles: &[
                    "Weekly forecast report timeout for {site}",
                    "Report timeout when exporting {site} plan",
                    "Demand report hits timeout for {site}",
                ],
                descriptions: &[
                    "The weekly report for {site} hits a timeout after {qty} seconds. Ref {ref}.",
                    "Exporting the {site} plan report ends with a timeout error. Ref {ref}.",
                    "The demand report for {site} never loads and shows a timeout. Ref {ref}.",
                ],
                resolutions: &[
                    "Narrowed the date range and scheduled the extract overnight in PlanCube.",
                    "Analytics team added an index on the PlanCube fact table and runtime dropped to a minute.",
                    "Split the export by region in PlanCube so each piece finishes within limits.",
                ],
            },
            Subtopic {
                name: "Data Refresh",
                description: "Forecast data not refreshed",
                keywords: &["refresh", "stale"],
                titles: &[
                    "Forecast data stale for {site}",
                    "Refresh failed for {site} demand data",
                    "Stale numbers after refresh for {site}",
                ],
                descriptions: &[
                    "The forecast for {site} still shows last month after the nightly refresh. Ref {ref}.",
                    "The refresh job for {site} demand data failed with no message. Ref {ref}.",
                    "Numbers for {site} look stale even after a manual refresh. Ref {ref}.",
                ],
                resolutions: &[
                    "Restarted the failed ingestion job in PlanCube and confirmed the load timestamp.",
                    "Upstream sales feed was late; PlanCube picked it up on the rerun an hour later.",
                    "Cleared the cached snapshot in PlanCube so dashboards read the latest partition.",
                ],
            },
        ],
    },
];

const REQUESTER_FOLLOW_UPS: &[&str] = &[
    "Any news on this? The crew is waiting.",
    "Still happening today, please help soon.",
    "Adding my manager in copy for visibility.",
    "We tried again after lunch with no luck.",
];

pub fn lexicon() -> &'static [Topic] {
    &LEXICON
}

/// Ground-truth labels for a generated ticket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truth {
    pub topic: usize,
    pub subtopic: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub tickets: usize,
    pub seed: u64,
    /// Tickets per topic follow the lexicon order cyclically unless this is
    /// set, in which case topic `i` gets exactly `sizes[i]` tickets.
    #[serde(skip)]
    pub sizes: Option<[usize; 6]>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            tickets: 120,
            seed: 7,
            sizes: None,
        }
    }
}

fn fill(template: &str, site: &str, reference: &str, qty: u32) -> String {
    template
        .replace("{site}", site)
        .replace("{ref}", reference)
        .replace("{qty}", &qty.to_string())
}

/// Generate tickets with their ground truth, ordered by creation time.
pub fn generate_with_truth(config: &SyntheticConfig) -> Vec<(Ticket, Truth)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut plan: Vec<Truth> = match config.sizes {
        Some(sizes) => sizes
            .iter()
            .enumerate()
            .flat_map(|(t, &n)| (0..n).map(move |i| Truth { topic: t, subtopic: i % 2 }))
            .collect(),
        None => (0..config.tickets)
            .map(|i| Truth {
                topic: i % LEXICON.len(),
                subtopic: (i / LEXICON.len()) % 2,
            })
            .collect(),
    };
    plan.shuffle(&mut rng);
    let start: DateTime<Utc> = Utc.with_ymd_and_hms(2024, 1, 8, 8, 0, 0).unwrap();
    let mut at = start;
    plan.into_iter()
        .enumerate()
        .map(|(i, truth)| {
            let sub = &LEXICON[truth.topic].subtopics[truth.subtopic];
            at += Duration::minutes(rng.random_range(20..400));
            let site = format!("FC{:03}", rng.random_range(100..1000));
            let reference = format!("REF-{:05}", rng.random_range(10000..100000));
            let qty: u32 = rng.random_range(2..90);
            let k = rng.random_range(0..sub.titles.len());
            let title = fill(sub.titles[k], &site, &reference, qty);
            let description = fill(sub.descriptions[rng.random_range(0..sub.descriptions.len())], &site, &reference, qty);
            let mut comments = Vec::new();
            if rng.random_bool(0.5) {
                comments.push(Comment {
                    author_role: AuthorRole::Requester,
                    created_at: Some(at + Duration::minutes(30)),
                    body: REQUESTER_FOLLOW_UPS.choose(&mut rng).unwrap().to_string(),
                });
            }
            comments.push(Comment {
                author_role: AuthorRole::Resolver,
                created_at: Some(at + Duration::minutes(90)),
                body: sub.resolutions[rng.random_range(0..sub.resolutions.len())].to_string(),
            });
            let ticket = Ticket {
                id: format!("SC-{:04}", i + 1),
                title,
                created_at: at,
                description,
                comments,
                status: TicketStatus::Resolved,
            };
            (ticket, truth)
        })
        .collect()
}

pub fn generate(config: &SyntheticConfig) -> Vec<Ticket> {
    generate_with_truth(config).into_iter().map(|(t, _)| t).collect()
}

/// Topic index whose keywords occur most often in `text`, if any.
pub fn detect_topic(text: &str) -> Option<usize> {
    best(text, LEXICON.iter().map(|t| t.keywords().collect::<Vec<_>>()))
}

/// Subtopic index within `topic` whose keywords occur most in `text`.
pub fn detect_subtopic(topic: usize, text: &str) -> Option<usize> {
    best(text, LEXICON[topic].subtopics.iter().map(|s| s.keywords.to_vec()))
}

fn best(text: &str, groups: impl Iterator<Item = Vec<&'static str>>) -> Option<usize> {
    let tokens = tokenize(text);
    let mut top: Option<(usize, usize)> = None;
    for (i, kws) in groups.enumerate() {
        let hits = tokens.iter().filter(|t| kws.contains(&t.as_str())).count();
        if hits > 0 && top.is_none_or(|(h, _)| hits > h) {
            top = Some((hits, i));
        }
    }
    top.map(|(_, i)| i)
}

/// Topic by exact name.
pub fn topic_by_name(name: &str) -> Option<usize> {
    let n = crate::prompts::normalize_name(name);
    LEXICON.iter().position(|t| crate::prompts::normalize_name(t.name) == n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn deterministic_and_balanced() {
        let a = generate_with_truth(&SyntheticConfig::default());
        let b = generate_with_truth(&SyntheticConfig::default());
        assert_eq!(a, b);
        assert_eq!(a.len(), 120);
        for t in 0..6 {
            assert_eq!(a.iter().filter(|(_, tr)| tr.topic == t).count(), 20);
        }
        let c = generate(&SyntheticConfig {
            seed: 8,
            ..Default::default()
        });
        assert_ne!(a[0].0, c[0]);
        assert!(a.windows(2).all(|w| w[0].0.created_at < w[1].0.created_at));
    }

    #[test]
    fn keywords_recover_truth() {
        for (t, truth) in generate_with_truth(&SyntheticConfig::default()) {
            let text = format!("{}\n{}", t.title, t.description);
            assert_eq!(detect_topic(&text), Some(truth.topic), "{text}");
            assert_eq!(detect_subtopic(truth.topic, &text), Some(truth.subtopic), "{text}");
            assert_eq!(detect_topic(&t.title), Some(truth.topic), "{}", t.title);
        }
    }

    #[test]
    fn keywords_are_disjoint() {
        let mut seen = HashSet::new();
        for t in lexicon() {
            for k in t.keywords() {
                assert!(seen.insert(k), "{k} reused");
            }
        }
    }

    #[test]
    fn custom_sizes() {
        let ts = generate_with_truth(&SyntheticConfig {
            sizes: Some([9, 10, 50, 51, 0, 0]),
            ..Default::default()
        });
        assert_eq!(ts.len(), 120);
        assert_eq!(ts.iter().filter(|(_, tr)| tr.topic == 3).count(), 51);
    }
}
