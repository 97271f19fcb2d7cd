//! Cost of capital by country, project cash-flow ledgers, NPV and IRR.
//!
//! Rates are percentage points at the edges (`*_pct`) and fractions inside
//! ledgers and for `npv` / `irr`.

use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arbitrage::{Termination, YearlyResults};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FinanceError {
    #[error("invalid market constants: {0}")]
    Constants(String),
    #[error("profit tax must lie in [0, 1), got {0}")]
    Tax(f64),
    #[error("IRR undefined: cash flows never change sign")]
    IrrUndefined,
    #[error("countries file: {0}")]
    Countries(String),
}

/// Capital-market parameters shared by all countries, in percentage points
/// except the two capital fractions and beta.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketConstants {
    pub equity_fraction: f64,
    pub debt_fraction: f64,
    pub beta: f64,
    pub market_risk_premium_pct: f64,
    pub cost_of_debt_pct: f64,
    pub spread_pct: f64,
}

impl Default for MarketConstants {
    fn default() -> Self {
        Self {
            equity_fraction: 0.45,
            debt_fraction: 0.55,
            beta: 0.77,
            market_risk_premium_pct: 4.75,
            cost_of_debt_pct: 4.49,
            spread_pct: 0.5,
        }
    }
}

impl MarketConstants {
    pub fn validate(&self) -> Result<(), FinanceError> {
        let vals = [
            self.equity_fraction,
            self.debt_fraction,
            self.beta,
            self.market_risk_premium_pct,
            self.cost_of_debt_pct,
            self.spread_pct,
        ];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(FinanceError::Constants(
                "values must be finite and non-negative".into(),
            ));
        }
        if (self.equity_fraction + self.debt_fraction - 1.0).abs() > 1e-9 {
            return Err(FinanceError::Constants(format!(
                "equity and debt fractions sum to {}",
                self.equity_fraction + self.debt_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryFinance {
    pub country: String,
    /// Profit tax as a fraction.
    pub profit_tax: f64,
    pub risk_free_pct: f64,
}

impl CountryFinance {
    pub fn new(
        country: impl Into<String>,
        tax_pct: f64,
        risk_free_pct: f64,
    ) -> Result<Self, FinanceError> {
        let profit_tax = tax_pct / 100.0;
        if !(0.0..1.0).contains(&profit_tax) || !risk_free_pct.is_finite() {
            return Err(FinanceError::Tax(profit_tax));
        }
        Ok(Self {
            country: country.into(),
            profit_tax,
            risk_free_pct,
        })
    }

    pub fn tax_pct(&self) -> f64 {
        self.profit_tax * 100.0
    }
}

/// Reads `country,tax_pct,rrf_pct`.
pub fn read_countries<R: Read>(r: R) -> Result<Vec<CountryFinance>, FinanceError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let headers = rdr
        .headers()
        .map_err(|e| FinanceError::Countries(e.to_string()))?
        .clone();
    let want = ["country", "tax_pct", "rrf_pct"];
    if headers.iter().collect::<Vec<_>>() != want {
        return Err(FinanceError::Countries(format!(
            "expected header {}",
            want.join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| FinanceError::Countries(e.to_string()))?;
        let num = |j: usize| -> Result<f64, FinanceError> {
            rec[j].parse().map_err(|_| {
                FinanceError::Countries(format!("row {}: `{}` is not a number", i + 2, &rec[j]))
            })
        };
        out.push(CountryFinance::new(&rec[0], num(1)?, num(2)?)?);
    }
    Ok(out)
}

/// Published country inputs with their cost-of-capital results:
/// `(country, tax %, risk-free %, cost of equity %, WACC %, discount rate %)`.
pub const REFERENCE_COUNTRIES: [(&str, f64, f64, f64, f64, f64); 24] = [
    ("Greece", 28.0, 2.10, 5.76, 4.37, 7.07),
    ("Croatia", 18.0, 2.75, 6.41, 4.91, 6.99),
    ("Italy", 24.0, 1.79, 5.45, 4.33, 6.69),
    ("Romania", 16.0, 2.25, 5.91, 4.73, 6.63),
    ("Spain", 30.0, 0.81, 4.47, 3.74, 6.34),
    ("Serbia", 15.0, 1.75, 5.41, 4.53, 6.33),
    ("Czech", 19.0, 1.25, 4.91, 4.21, 6.20),
    ("Portugal", 21.0, 0.96, 4.62, 4.03, 6.10),
    ("Slovenia", 19.0, 1.01, 4.67, 4.10, 6.06),
    ("Norway", 22.0, 0.74, 4.40, 3.91, 6.01),
    ("Latvia", 20.0, 0.80, 4.46, 3.98, 5.98),
    ("France", 33.3, 0.03, 3.69, 3.31, 5.96),
    ("Poland", 19.0, 0.75, 4.41, 3.98, 5.92),
    ("Hungary", 9.0, 1.15, 4.81, 4.41, 5.85),
    ("Lithuania", 15.0, 0.75, 4.41, 4.08, 5.80),
    ("UK", 19.0, 0.30, 3.96, 3.78, 5.67),
    ("Austria", 25.0, -0.01, 3.65, 3.49, 5.66),
    ("Netherlands", 25.0, -0.17, 3.49, 3.42, 5.56),
    ("Sweden", 21.4, -0.13, 3.53, 3.53, 5.49),
    ("Ireland", 12.5, 0.16, 3.82, 3.88, 5.43),
    ("Finland", 20.0, -0.23, 3.43, 3.52, 5.40),
    ("Denmark", 22.0, -0.44, 3.22, 3.37, 5.33),
    ("Germany&Lux.", 15.0, -0.47, 3.19, 3.53, 5.16),
    ("Switzerland", 8.5, -0.49, 3.17, 3.68, 5.03),
];

/// Published discount rate of a reference country, %.
pub fn reference_discount_rate(country: &str) -> Option<f64> {
    REFERENCE_COUNTRIES
        .iter()
        .find(|r| r.0 == country)
        .map(|r| r.5)
}

/// CAPM cost of equity, %.
pub fn cost_of_equity(risk_free_pct: f64, beta: f64, market_risk_premium_pct: f64) -> f64 {
    risk_free_pct + beta * market_risk_premium_pct
}

/// Weighted average cost of capital with the debt tax shield, %.
pub fn wacc(c: &MarketConstants, country: &CountryFinance) -> f64 {
    let r_e = cost_of_equity(country.risk_free_pct, c.beta, c.market_risk_premium_pct);
    c.equity_fraction * r_e + c.debt_fraction * c.cost_of_debt_pct * (1.0 - country.profit_tax)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RateVariant {
    /// `(WACC - T + spread) / (1 - T)` with `T` in percentage points.
    Literal,
    /// `(WACC + spread) / (1 - T)`.
    #[default]
    Pretax,
    /// `WACC / (1 - T) + 2 * spread`; an empirical fit to the published rates.
    Tabulated,
}

impl FromStr for RateVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "literal" => Ok(Self::Literal),
            "pretax" => Ok(Self::Pretax),
            "tabulated" => Ok(Self::Tabulated),
            other => Err(format!(
                "unknown rate variant `{other}` (pretax|literal|tabulated)"
            )),
        }
    }
}

impl fmt::Display for RateVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Literal => "literal",
            Self::Pretax => "pretax",
            Self::Tabulated => "tabulated",
        })
    }
}

/// Discount rate, %. `profit_tax` is a fraction.
pub fn discount_rate(
    wacc_pct: f64,
    profit_tax: f64,
    spread_pct: f64,
    variant: RateVariant,
) -> Result<f64, FinanceError> {
    if !(0.0..1.0).contains(&profit_tax) {
        return Err(FinanceError::Tax(profit_tax));
    }
    Ok(match variant {
        RateVariant::Literal => (wacc_pct - 100.0 * profit_tax + spread_pct) / (1.0 - profit_tax),
        RateVariant::Pretax => (wacc_pct + spread_pct) / (1.0 - profit_tax),
        RateVariant::Tabulated => wacc_pct / (1.0 - profit_tax) + 2.0 * spread_pct,
    })
}

/// Cost-of-capital figures for one country, %.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapitalCost {
    pub country: String,
    pub tax_pct: f64,
    pub risk_free_pct: f64,
    pub cost_of_equity_pct: f64,
    pub wacc_pct: f64,
    pub discount_rate_pct: f64,
}

pub fn capital_cost(
    c: &MarketConstants,
    country: &CountryFinance,
    variant: RateVariant,
) -> CapitalCost {
    let w = wacc(c, country);
    CapitalCost {
        country: country.country.clone(),
        tax_pct: country.tax_pct(),
        risk_free_pct: country.risk_free_pct,
        cost_of_equity_pct: cost_of_equity(
            country.risk_free_pct,
            c.beta,
            c.market_risk_premium_pct,
        ),
        wacc_pct: w,
        discount_rate_pct: discount_rate(w, country.profit_tax, c.spread_pct, variant)
            .expect("country tax validated at construction"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DepreciationPolicy {
    /// Capex spread evenly over the realized operating years.
    #[default]
    StraightLine,
    /// Capex spread evenly over a fixed number of years (later years get none).
    StraightLineOver(usize),
    None,
}

impl DepreciationPolicy {
    fn charge(&self, capex: f64, year: usize, operating_years: usize) -> f64 {
        let over = match *self {
            DepreciationPolicy::StraightLine => operating_years,
            DepreciationPolicy::StraightLineOver(n) => n,
            DepreciationPolicy::None => 0,
        };
        if over == 0 || year > over {
            0.0
        } else {
            capex / over as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ResidualPolicy {
    /// Battery capex scaled by the remaining usable capacity plus the full converter capex.
    #[default]
    Proportional,
    Zero,
}

/// Investment split between the two components, €.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capex {
    pub battery: f64,
    pub converter: f64,
}

impl Capex {
    pub fn total(&self) -> f64 {
        self.battery + self.converter
    }
}

impl ResidualPolicy {
    /// Recovered value, €, given the battery's remaining usable fraction in `[0, 1]`.
    pub fn value(&self, usable_fraction: f64, capex: &Capex) -> f64 {
        match self {
            ResidualPolicy::Proportional => {
                capex.battery * usable_fraction.clamp(0.0, 1.0) + capex.converter
            }
            ResidualPolicy::Zero => 0.0,
        }
    }
}

/// Share of the capacity between retirement threshold and new that is left.
pub fn usable_fraction(capacity: f64, eol_capacity: f64, initial_capacity: f64) -> f64 {
    let span = initial_capacity - eol_capacity;
    if span <= 0.0 {
        return 0.0;
    }
    ((capacity - eol_capacity) / span).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerOptions {
    pub om_rate: f64,
    pub profit_tax: f64,
    pub depreciation: DepreciationPolicy,
    pub residual: ResidualPolicy,
}

/// Yearly cash flows, € (index 0 is the investment year).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CashFlowLedger {
    pub flows: Vec<f64>,
    pub residual: f64,
}

impl CashFlowLedger {
    pub fn operating_years(&self) -> usize {
        self.flows.len().saturating_sub(1)
    }
}

/// Builds the ledger of one configuration. Residual value is booked only when
/// operation stops while the battery is still usable.
pub fn assemble_cash_flows(
    results: &YearlyResults,
    capex: &Capex,
    opts: &LedgerOptions,
) -> CashFlowLedger {
    let total = capex.total();
    let om = opts.om_rate * total;
    let n = results.operating_years();
    let mut flows = Vec::with_capacity(n + 1);
    flows.push(-total);
    for (i, y) in results.years.iter().enumerate() {
        let dep = opts.depreciation.charge(total, i + 1, n);
        let tax = opts.profit_tax * (y.cash_flow - om - dep).max(0.0);
        flows.push(y.cash_flow - om - tax);
    }
    let residual = if results.residual_event && results.termination != Termination::EndOfLife {
        let k = results.terminal_state().capacity;
        opts.residual.value(
            usable_fraction(k, results.eol_capacity, results.initial_capacity),
            capex,
        )
    } else {
        0.0
    };
    *flows.last_mut().expect("year 0 present") += residual;
    CashFlowLedger { flows, residual }
}

/// After-tax flow of one operating year.
pub fn operating_flow(margin: f64, om: f64, depreciation: f64, profit_tax: f64) -> f64 {
    margin - om - profit_tax * (margin - om - depreciation).max(0.0)
}

/// Present value at `rate` (fraction, > -1).
pub fn npv(flows: &[f64], rate: f64) -> f64 {
    assert!(rate > -1.0, "discount rate must exceed -100%");
    let d = 1.0 / (1.0 + rate);
    let mut f = 1.0;
    let mut s = 0.0;
    for v in flows {
        s += v * f;
        f *= d;
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Irr {
    pub rate: f64,
    /// More than one sign change of the NPV curve was found; `rate` is the smallest root.
    pub multiple_roots: bool,
}

pub const IRR_MIN: f64 = -0.99;
pub const IRR_MAX: f64 = 10.0;

/// Internal rate of return in `(IRR_MIN, IRR_MAX)`.
pub fn irr(flows: &[f64]) -> Result<Irr, FinanceError> {
    let pos = flows.iter().any(|v| *v > 0.0);
    let neg = flows.iter().any(|v| *v < 0.0);
    if !(pos && neg) {
        return Err(FinanceError::IrrUndefined);
    }
    // scan on a grid uniform in log(1 + r)
    const STEPS: usize = 4000;
    let (a, b) = ((1.0 + IRR_MIN).ln(), (1.0 + IRR_MAX).ln());
    let rate_at =
        |i: usize| ((a + (b - a) * i as f64 / STEPS as f64).exp() - 1.0).clamp(IRR_MIN, IRR_MAX);
    let mut brackets = Vec::new();
    let mut prev = (rate_at(0), npv(flows, rate_at(0)));
    for i in 1..=STEPS {
        let r = rate_at(i);
        let v = npv(flows, r);
        if v == 0.0 || prev.1 == 0.0 || (v < 0.0) != (prev.1 < 0.0) {
            if brackets.last() != Some(&prev.0) {
                brackets.push(prev.0);
            }
            if v == 0.0 || prev.1 != 0.0 {
                brackets.push(r);
            }
        }
        prev = (r, v);
    }
    if brackets.is_empty() {
        return Err(FinanceError::IrrUndefined);
    }
    let (mut lo, mut hi) = (brackets[0], brackets[1.min(brackets.len() - 1)]);
    let mut f_lo = npv(flows, lo);
    if f_lo == 0.0 {
        hi = lo;
    }
    for _ in 0..200 {
        if hi - lo <= 1e-15 * (1.0 + lo.abs()) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let f_mid = npv(flows, mid);
        if f_mid == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(Irr {
        rate: 0.5 * (lo + hi),
        multiple_roots: brackets.len() > 2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arbitrage::YearResult;
    use crate::bess::{BatteryState, LastOp};
    use approx::assert_abs_diff_eq;

    fn country(tax: f64, rrf: f64) -> CountryFinance {
        CountryFinance::new("X", tax, rrf).unwrap()
    }

    #[test]
    fn cost_of_equity_examples() {
        assert_abs_diff_eq!(cost_of_equity(2.10, 0.77, 4.75), 5.76, epsilon = 0.005);
        assert_eq!(cost_of_equity(0.0, 0.0, 4.75), 0.0);
        assert_abs_diff_eq!(cost_of_equity(-0.49, 0.77, 4.75), 3.17, epsilon = 0.005);
    }

    #[test]
    fn wacc_examples() {
        let c = MarketConstants::default();
        assert_abs_diff_eq!(wacc(&c, &country(28.0, 2.10)), 4.37, epsilon = 0.01);
        assert_abs_diff_eq!(wacc(&c, &country(33.3, 0.03)), 3.31, epsilon = 0.01);
        assert!(CountryFinance::new("X", 100.0, 0.0).is_err());
    }

    #[test]
    fn reference_rows_reproduce() {
        let c = MarketConstants::default();
        for (name, tax, rrf, r_e, w, _) in REFERENCE_COUNTRIES {
            let cf = CountryFinance::new(name, tax, rrf).unwrap();
            assert_abs_diff_eq!(
                cost_of_equity(rrf, c.beta, c.market_risk_premium_pct),
                r_e,
                epsilon = 0.01
            );
            assert_abs_diff_eq!(wacc(&c, &cf), w, epsilon = 0.01);
        }
    }

    #[test]
    fn tabulated_variant_matches_published_rates() {
        let c = MarketConstants::default();
        for (name, tax, rrf, _, _, dr) in REFERENCE_COUNTRIES {
            let cf = CountryFinance::new(name, tax, rrf).unwrap();
            let k = capital_cost(&c, &cf, RateVariant::Tabulated);
            assert_abs_diff_eq!(k.discount_rate_pct, dr, epsilon = 0.01);
            assert_eq!(reference_discount_rate(name), Some(dr));
        }
        assert_eq!(reference_discount_rate("Atlantis"), None);
    }

    #[test]
    fn discount_rate_variants() {
        let lit = discount_rate(4.37, 0.28, 0.5, RateVariant::Literal).unwrap();
        assert_abs_diff_eq!(lit, -32.125, epsilon = 0.01);
        let pre = discount_rate(4.37, 0.28, 0.5, RateVariant::Pretax).unwrap();
        assert_abs_diff_eq!(pre, 6.7639, epsilon = 0.001);
        for v in [
            RateVariant::Literal,
            RateVariant::Pretax,
            RateVariant::Tabulated,
        ] {
            assert_abs_diff_eq!(
                discount_rate(4.0, 0.0, 0.0, v).unwrap(),
                4.0,
                epsilon = 1e-12
            );
        }
        assert!(discount_rate(4.0, 1.0, 0.5, RateVariant::Pretax).is_err());
    }

    #[test]
    fn operating_flow_examples() {
        assert_abs_diff_eq!(
            operating_flow(100e3, 11.2e3, 100e3, 0.3),
            88.8e3,
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(
            operating_flow(300e3, 11.2e3, 100e3, 0.3),
            232.16e3,
            epsilon = 1e-6
        );
    }

    #[test]
    fn npv_examples() {
        assert_eq!(npv(&[-1_120_000.0], 0.07), -1_120_000.0);
        assert_abs_diff_eq!(npv(&[-100.0, 110.0], 0.10), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(npv(&[-1000.0, 600.0, 600.0], 0.05), 115.65, epsilon = 0.01);
    }

    #[test]
    fn irr_examples() {
        assert_abs_diff_eq!(irr(&[-100.0, 110.0]).unwrap().rate, 0.10, epsilon = 1e-10);
        let r = irr(&[-1000.0, 600.0, 600.0]).unwrap();
        // discount factor root of 600x^2 + 600x - 1000
        let x = (-3.0 + 69f64.sqrt()) / 6.0;
        assert_abs_diff_eq!(r.rate, 1.0 / x - 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(r.rate, 0.13066, epsilon = 1e-4);
        assert!(!r.multiple_roots);
        assert_eq!(irr(&[-100.0, -50.0]), Err(FinanceError::IrrUndefined));
        // roots at 10% and 20%
        let m = irr(&[-100.0, 230.0, -132.0]).unwrap();
        assert_abs_diff_eq!(m.rate, 0.10, epsilon = 1e-9);
        assert!(m.multiple_roots);
    }

    fn results(margins: &[f64], termination: Termination, capacity: f64) -> YearlyResults {
        let s = BatteryState {
            capacity: 10.0,
            level: 0.0,
            cycles: 0,
            last_op: LastOp::Discharge,
        };
        let e = BatteryState { capacity, ..s };
        YearlyResults {
            years: margins
                .iter()
                .enumerate()
                .map(|(i, &m)| YearResult {
                    year: i + 1,
                    cash_flow: m,
                    start: s,
                    end: e,
                    activity: Default::default(),
                    worst_gap: 0.0,
                })
                .collect(),
            termination,
            residual_event: termination != Termination::EndOfLife,
            initial: s,
            eol_capacity: 2.0,
            initial_capacity: 10.0,
            first_activity: None,
        }
    }

    #[test]
    fn ledger_assembly() {
        let capex = Capex {
            battery: 1_000_000.0,
            converter: 120_000.0,
        };
        let opts = LedgerOptions {
            om_rate: 0.01,
            profit_tax: 0.3,
            depreciation: DepreciationPolicy::StraightLineOver(10),
            residual: ResidualPolicy::Proportional,
        };
        let l = assemble_cash_flows(
            &results(&[300e3, 100e3], Termination::NegativeCashFlow, 6.0),
            &capex,
            &opts,
        );
        assert_eq!(l.flows.len(), 3);
        assert_eq!(l.flows[0], -1_120_000.0);
        // depreciation 112k: year 1 tax 0.3 * (300k - 11.2k - 112k)
        assert_abs_diff_eq!(
            l.flows[1],
            300e3 - 11.2e3 - 0.3 * (300e3 - 11.2e3 - 112e3),
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(l.residual, 500_000.0 + 120_000.0, epsilon = 1e-6);
        assert_abs_diff_eq!(l.flows[2], 100e3 - 11.2e3 + l.residual, epsilon = 1e-6);

        let dead = assemble_cash_flows(
            &results(&[300e3], Termination::EndOfLife, 1.9),
            &capex,
            &opts,
        );
        assert_eq!(dead.residual, 0.0);

        let none = assemble_cash_flows(
            &results(&[], Termination::NegativeCashFlow, 10.0),
            &capex,
            &opts,
        );
        assert_eq!(none.flows, vec![-1_120_000.0 + 1_120_000.0]);
    }

    #[test]
    fn usable_fraction_bounds() {
        assert_eq!(usable_fraction(10.0, 2.0, 10.0), 1.0);
        assert_eq!(usable_fraction(1.0, 2.0, 10.0), 0.0);
        assert_abs_diff_eq!(usable_fraction(6.0, 2.0, 10.0), 0.5);
    }

    #[test]
    fn reads_countries() {
        let c = read_countries("country,tax_pct,rrf_pct\nGreece,28,2.10\n".as_bytes()).unwrap();
        assert_eq!(c[0].country, "Greece");
        assert_abs_diff_eq!(c[0].profit_tax, 0.28);
        assert!(read_countries("name,tax\n".as_bytes()).is_err());
        assert!(read_countries("country,tax_pct,rrf_pct\nX,abc,1\n".as_bytes()).is_err());
    }
}
