//! Synthetic legal corpus and instruction set for smoke runs and the overfit
//! check. Output is a pure function of the seed.

use lexforge_core::data::Subset;
use lexforge_core::InstructionRecord;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// (charge, criminal-law article)
pub const CHARGES: [(&str, &str); 12] = [
    ("盗窃罪", "264"),
    ("诈骗罪", "266"),
    ("抢劫罪", "263"),
    ("故意伤害罪", "234"),
    ("交通肇事罪", "133"),
    ("妨害公务罪", "277"),
    ("寻衅滋事罪", "293"),
    ("职务侵占罪", "271"),
    ("非法拘禁罪", "238"),
    ("敲诈勒索罪", "274"),
    ("合同诈骗罪", "224"),
    ("贪污罪", "382"),
];

const NAMES: [&str; 8] = ["张某", "李某", "王某", "赵某", "刘某", "陈某", "杨某", "黄某"];
const CITIES: [&str; 8] = ["北京市", "上海市", "广州市", "杭州市", "成都市", "武汉市", "南京市", "西安市"];
const PINYIN: [&str; 8] = ["Jing", "Hu", "Yue", "Zhe", "Chuan", "E", "Su", "Shaan"];
const CIVIL: [&str; 6] = [
    "当事人应当按照约定全面履行自己的义务",
    "借款人应当按照约定的期限返还借款",
    "出卖人应当按照约定的期限交付标的物",
    "行为人因过错侵害他人民事权益造成损害的，应当承担侵权责任",
    "债务人不履行到期债务的，债权人可以请求其承担违约责任",
    "民事主体从事民事活动，应当遵循诚信原则",
];

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let (charge, article) = *CHARGES.choose(rng).unwrap();
    let name = NAMES.choose(rng).unwrap();
    let city_idx = rng.random_range(0..CITIES.len());
    let city = CITIES[city_idx];
    match rng.random_range(0..6) {
        0 => format!(
            "根据《中华人民共和国刑法》第{article}条，犯{charge}的，处{}年以下有期徒刑。",
            rng.random_range(2..11)
        ),
        1 => format!(
            "被告人{name}于{}年{}月{}日在{city}实施{charge}，涉案金额{}元。",
            rng.random_range(2015..2024),
            rng.random_range(1..13),
            rng.random_range(1..29),
            rng.random_range(1..500) * 100
        ),
        2 => format!("法院认为，被告人{name}的行为已构成{charge}，依照刑法第{article}条应予惩处。"),
        3 => format!(
            "Case ({}) {} Criminal No. {}: defendant {name} convicted of {charge}, sentenced to {} months.",
            rng.random_range(2015..2024),
            PINYIN[city_idx],
            rng.random_range(1..900),
            rng.random_range(6..120)
        ),
        4 => format!(
            "《中华人民共和国民法典》第{}条规定，{}。",
            rng.random_range(500..1260),
            CIVIL.choose(rng).unwrap()
        ),
        _ => format!("{charge}的认定应当结合刑法第{article}条的构成要件进行审查。"),
    }
}

/// One document per line, stopping at the first line that reaches
/// `target_bytes` in total.
pub fn corpus(seed: u64, target_bytes: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::new();
    let mut total = 0;
    while total < target_bytes {
        let n = rng.random_range(3..9);
        let doc: String = (0..n).map(|_| sentence(&mut rng)).collect();
        total += doc.len() + 1;
        docs.push(doc);
    }
    docs
}

/// 32 distinct instruction/output pairs over the charges table.
pub fn instructions() -> Vec<InstructionRecord> {
    let mut out = Vec::with_capacity(32);
    for (i, &(charge, article)) in CHARGES.iter().enumerate() {
        out.push(record(format!("犯{charge}适用刑法哪一条？"), format!("第{article}条。"), Subset::A));
        out.push(record(
            format!("{}在{}实施了{charge}规定的行为，构成什么罪？", NAMES[i % 8], CITIES[i % 8]),
            format!("构成{charge}。"),
            Subset::B,
        ));
    }
    for (i, &(charge, article)) in CHARGES.iter().take(8).enumerate() {
        out.push(record(
            format!("{}犯{charge}，应当如何处理？", NAMES[(i + 3) % 8]),
            format!("依照刑法第{article}条定罪处罚。"),
            Subset::C,
        ));
    }
    out
}

fn record(instruction: String, output: String, subset: Subset) -> InstructionRecord {
    InstructionRecord {
        instruction,
        output,
        subset,
    }
}
