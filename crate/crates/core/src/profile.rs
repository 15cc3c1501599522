//! Bundled applications: program source, initial store and bug scenarios.

use hpl::{parse, Program, RequestEnvelope, Value};

use crate::store::Store;

pub const SHOP_SOURCE: &str = include_str!("../apps/shop.hpl");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown application profile `{0}`")]
pub struct UnknownProfile(pub String);

#[derive(Debug, Clone)]
pub struct AppProfile {
    pub name: &'static str,
    pub source: &'static str,
    pub entries: Vec<(String, Value)>,
}

impl AppProfile {
    pub fn program(&self) -> Program {
        parse(self.source).expect("bundled application parses")
    }

    pub fn store(&self) -> Store {
        Store::from_entries(self.entries.clone())
    }
}

pub fn profile(name: &str) -> Result<AppProfile, UnknownProfile> {
    match name {
        "shop" => Ok(shop()),
        other => Err(UnknownProfile(other.to_string())),
    }
}

fn product(
    id: &str,
    name: &str,
    price: i64,
    description: Option<&str>,
    promo: Option<i64>,
    weight: Option<i64>,
    stock: Option<i64>,
) -> (String, Value) {
    let opt_int = |v: Option<i64>| v.map(Value::Int).unwrap_or(Value::Null);
    (
        format!("product:{id}"),
        Value::record([
            ("id", Value::str(id)),
            ("name", Value::str(name)),
            ("price", Value::Int(price)),
            (
                "description",
                description.map(Value::str).unwrap_or(Value::Null),
            ),
            (
                "promo",
                promo
                    .map(|p| Value::record([("percent", Value::Int(p))]))
                    .unwrap_or(Value::Null),
            ),
            ("weight", opt_int(weight)),
            ("stock", opt_int(stock)),
        ]),
    )
}

fn carrier(code: &str, fields: Vec<(&str, Value)>) -> (String, Value) {
    (format!("carrier:{code}"), Value::record(fields))
}

pub const SHOP_PRODUCTS: [&str; 6] = ["p1", "p2", "p3", "p4", "p5", "p6"];

fn shop() -> AppProfile {
    let mut entries = vec![
        (
            "catalog".to_string(),
            Value::List(SHOP_PRODUCTS.iter().map(|p| Value::str(*p)).collect()),
        ),
        product(
            "p1",
            "Espresso cup",
            1250,
            Some("Porcelain cup for a double shot."),
            None,
            Some(180),
            Some(12),
        ),
        product("p2", "Moka pot", 5990, None, Some(10), Some(900), Some(0)),
        product(
            "p3",
            "Coffee beans 1kg",
            2490,
            Some("Medium roast, whole beans."),
            None,
            Some(1000),
            None,
        ),
        product(
            "p4",
            "Burr grinder",
            8900,
            Some("Conical burrs, 40 settings."),
            Some(25),
            None,
            Some(3),
        ),
        product("p5", "Gift card", 2500, None, None, None, None),
        product(
            "p6",
            "Milk jug",
            1590,
            Some("Stainless steel, 350 ml."),
            None,
            Some(350),
            Some(7),
        ),
        carrier(
            "std",
            vec![
                ("name", Value::str("Standard")),
                ("strategy", Value::str("flat")),
                ("base", Value::Int(499)),
                ("per_item", Value::Int(100)),
                ("min_fee", Value::Int(599)),
            ],
        ),
        carrier(
            "eco",
            vec![
                ("name", Value::str("Economy")),
                ("strategy", Value::str("weight")),
                ("base", Value::Null),
                ("per_kg", Value::Int(120)),
            ],
        ),
        carrier(
            "pickup",
            vec![
                ("name", Value::str("Store pickup")),
                ("strategy", Value::str("flat")),
                ("base", Value::Null),
                ("per_item", Value::Int(0)),
                ("min_fee", Value::Null),
            ],
        ),
        (
            "coupon:SAVE10".to_string(),
            Value::record([("percent", Value::Int(10))]),
        ),
        (
            "coupon:HALF".to_string(),
            Value::record([("percent", Value::Int(50))]),
        ),
        (
            "customer:alice@example.com".to_string(),
            Value::record([
                ("email", Value::str("alice@example.com")),
                ("name", Value::str("Alice")),
                ("since", Value::Int(0)),
            ]),
        ),
    ];
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    AppProfile {
        name: "shop",
        source: SHOP_SOURCE,
        entries,
    }
}

/// The two end-to-end bug scenarios bundled with the shop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// A flat-rate carrier without a per-item fee: the shipping computation multiplies null.
    Shipping,
    /// Adding a customer whose email is taken: the error page looks up a missing property.
    AdminEmail,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Shipping => "shipping",
            Scenario::AdminEmail => "admin-email",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "shipping" => Some(Scenario::Shipping),
            "admin-email" => Some(Scenario::AdminEmail),
            _ => None,
        }
    }

    /// Extra store entries that make the bug reachable.
    pub fn entries(self) -> Vec<(String, Value)> {
        match self {
            Scenario::Shipping => vec![carrier(
                "express",
                vec![
                    ("name", Value::str("Express")),
                    ("strategy", Value::str("flat")),
                    ("base", Value::Int(990)),
                    ("per_item", Value::Null),
                    ("min_fee", Value::Null),
                ],
            )],
            Scenario::AdminEmail => vec![],
        }
    }

    /// Requests that reproduce the failure from a fresh session labelled `bug`. The
    /// last one fails.
    pub fn failing_requests(self) -> Vec<RequestEnvelope> {
        let reqs = match self {
            Scenario::Shipping => vec![
                RequestEnvelope::new("bug-1", "POST", "/cart/add").with_body("product=p1&qty=2"),
                RequestEnvelope::new("bug-2", "GET", "/shipping?carrier=express"),
            ],
            Scenario::AdminEmail => vec![RequestEnvelope::new("bug-1", "POST", "/admin/customer")
                .with_body("email=alice%40example.com&name=Alicia")],
        };
        reqs.into_iter()
            .map(|r| r.with_session(Some("bug".into())))
            .collect()
    }

    /// The developer's fix, as a replacement for one method.
    pub fn human_fix(self) -> (&'static str, &'static str) {
        match self {
            Scenario::Shipping => ("flat_price", SHIPPING_HUMAN_FIX),
            Scenario::AdminEmail => ("validate_unique", ADMIN_HUMAN_FIX),
        }
    }

    pub fn profile_with_scenario(self, base: &AppProfile) -> AppProfile {
        let mut p = base.clone();
        p.entries.extend(self.entries());
        p.entries.sort_by(|a, b| a.0.cmp(&b.0));
        p
    }
}

pub const SHIPPING_HUMAN_FIX: &str = r#"method flat_price(carrier: record, cart: list): int {
    let price: int = carrier.base;
    if (price == null) {
        price = 0;
    }
    let count: int = cart_count(cart);
    let min_fee: int = carrier.min_fee;
    let per_item: int = carrier.per_item != null ? carrier.per_item : 0;
    price = price + per_item * count;
    if (min_fee != null && price < min_fee) {
        price = min_fee;
    }
    return price;
}
"#;

pub const ADMIN_HUMAN_FIX: &str = r#"method validate_unique(email: str): record {
    let existing: record = store.get("customer:" + email);
    if (existing != null) {
        let error: record = {props: {email: {value: email, message: "nonUniqueUsernameError"}, username: {value: email, message: "nonUniqueUsernameError"}}};
        return error;
    }
    return null;
}
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shop_parses_and_validates() {
        let p = profile("shop").unwrap().program();
        p.validate().unwrap();
        assert!(profile("nope").is_err());
    }

    #[test]
    fn human_fixes_parse_as_single_methods() {
        for s in [Scenario::Shipping, Scenario::AdminEmail] {
            let (name, src) = s.human_fix();
            let mut p = profile("shop").unwrap().program();
            let m = hpl::parse_method(src, &mut p).unwrap();
            assert_eq!(m.name, name);
            assert_eq!(m.id, p.method_by_name(name).unwrap().id);
        }
    }
}
