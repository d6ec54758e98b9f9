//! Published ImageNet benchmark figures for the candidate backbones,
//! carried as reference data for candidate screening and reporting.

use crate::{Error, Result};

/// One benchmark row: compute cost, size and ImageNet accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelCatalogEntry {
    pub name: &'static str,
    pub year: u32,
    pub flops_m: f64,
    pub params_m: f64,
    pub top1: f64,
    pub top5: f64,
}

const CATALOG: &[ModelCatalogEntry] = &[
    ModelCatalogEntry { name: "AlexNet", year: 2012, flops_m: 955.21, params_m: 61.10, top1: 56.52, top5: 79.07 },
    ModelCatalogEntry { name: "VGG11", year: 2014, flops_m: 8171.57, params_m: 132.86, top1: 69.02, top5: 88.63 },
    ModelCatalogEntry { name: "VGG13", year: 2014, flops_m: 11895.04, params_m: 133.05, top1: 69.93, top5: 89.25 },
    ModelCatalogEntry { name: "VGG16", year: 2014, flops_m: 16063.36, params_m: 138.36, top1: 71.59, top5: 90.38 },
    ModelCatalogEntry { name: "VGG19", year: 2014, flops_m: 20231.68, params_m: 143.67, top1: 72.38, top5: 90.88 },
    ModelCatalogEntry { name: "ResNet18", year: 2015, flops_m: 1836.82, params_m: 11.69, top1: 69.76, top5: 89.08 },
    ModelCatalogEntry { name: "ResNet34", year: 2015, flops_m: 3692.78, params_m: 21.80, top1: 73.31, top5: 91.42 },
    ModelCatalogEntry { name: "ResNet50", year: 2015, flops_m: 4154.96, params_m: 25.56, top1: 76.13, top5: 92.86 },
    ModelCatalogEntry { name: "ResNet101", year: 2015, flops_m: 7892.77, params_m: 44.55, top1: 77.37, top5: 93.55 },
    ModelCatalogEntry { name: "ResNet152", year: 2015, flops_m: 11636.60, params_m: 60.19, top1: 78.31, top5: 94.05 },
    ModelCatalogEntry { name: "Inception-v3", year: 2015, flops_m: 5730.17, params_m: 27.16, top1: 75.64, top5: 92.59 },
    ModelCatalogEntry { name: "Inception-v4", year: 2015, flops_m: 12561.10, params_m: 42.68, top1: 80.08, top5: 94.89 },
    ModelCatalogEntry { name: "SqueezeNet-v1", year: 2016, flops_m: 865.78, params_m: 1.25, top1: 58.09, top5: 80.42 },
    ModelCatalogEntry { name: "SqueezeNet-v1.1", year: 2016, flops_m: 377.80, params_m: 1.24, top1: 58.18, top5: 80.62 },
    ModelCatalogEntry { name: "DenseNet 121", year: 2017, flops_m: 2928.89, params_m: 7.98, top1: 74.43, top5: 91.97 },
    ModelCatalogEntry { name: "DenseNet 169", year: 2017, flops_m: 3473.88, params_m: 14.15, top1: 75.60, top5: 92.81 },
    ModelCatalogEntry { name: "DenseNet 201", year: 2017, flops_m: 4435.03, params_m: 20.01, top1: 76.87, top5: 93.37 },
    ModelCatalogEntry { name: "DenseNet 161", year: 2017, flops_m: 7902.37, params_m: 28.68, top1: 77.14, top5: 93.56 },
    ModelCatalogEntry { name: "Xception", year: 2017, flops_m: 8494.59, params_m: 22.86, top1: 78.89, top5: 94.29 },
    ModelCatalogEntry { name: "MobileNetV2", year: 2017, flops_m: 336.43, params_m: 3.50, top1: 71.81, top5: 90.42 },
    ModelCatalogEntry { name: "ShuffleNet-v2.05", year: 2018, flops_m: 52.32, params_m: 1.37, top1: 60.55, top5: 81.75 },
    ModelCatalogEntry { name: "ShuffleNet-v2.1", year: 2018, flops_m: 160.09, params_m: 2.28, top1: 69.36, top5: 88.32 },
    ModelCatalogEntry { name: "MnasNet", year: 2018, flops_m: 649.51, params_m: 4.38, top1: 61.95, top5: 84.73 },
    ModelCatalogEntry { name: "PNASNet", year: 2018, flops_m: 25945.87, params_m: 86.06, top1: 82.74, top5: 95.99 },
    ModelCatalogEntry { name: "NasNet", year: 2018, flops_m: 24882.21, params_m: 88.75, top1: 82.51, top5: 96.02 },
    ModelCatalogEntry { name: "NasNet mobile", year: 2018, flops_m: 667.75, params_m: 5.29, top1: 74.08, top5: 91.74 },
];

/// The full benchmark table.
pub fn catalog() -> &'static [ModelCatalogEntry] {
    CATALOG
}

fn normalize(name: &str) -> String {
    name.chars()
        .filter(|c| !c.is_whitespace() && *c != '-' && *c != '_')
        .collect::<String>()
        .to_ascii_lowercase()
}

/// Look a model up by name. Exact match first, then a normalized match
/// that ignores case, spaces and hyphens ("DenseNet201" finds
/// "DenseNet 201").
pub fn catalog_lookup(name: &str) -> Result<&'static ModelCatalogEntry> {
    if let Some(entry) = CATALOG.iter().find(|e| e.name == name) {
        return Ok(entry);
    }
    let wanted = normalize(name);
    CATALOG
        .iter()
        .find(|e| normalize(e.name) == wanted)
        .ok_or_else(|| Error::UnknownModel(name.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vgg19_row() {
        let e = catalog_lookup("VGG19").unwrap();
        assert_eq!(e.flops_m, 20231.68);
        assert_eq!(e.params_m, 143.67);
        assert_eq!(e.top1, 72.38);
        assert_eq!(e.top5, 90.88);
    }

    #[test]
    fn resnet50_row() {
        let e = catalog_lookup("ResNet50").unwrap();
        assert_eq!(e.top1, 76.13);
        assert_eq!(e.top5, 92.86);
    }

    #[test]
    fn top1_never_exceeds_top5() {
        assert_eq!(catalog().len(), 26);
        for e in catalog() {
            assert!(e.top1 <= e.top5, "{} violates top1 <= top5", e.name);
        }
    }

    #[test]
    fn normalized_lookup() {
        assert_eq!(catalog_lookup("DenseNet201").unwrap().name, "DenseNet 201");
        assert_eq!(catalog_lookup("vgg16").unwrap().name, "VGG16");
        assert!(catalog_lookup("LeNet").is_err());
    }
}
