"""Crop class codes, member-state codes and the reference groupings."""

CLASS_LABELS = {
    "B11": "Common wheat",
    "B12": "Durum wheat",
    "B13": "Barley",
    "B14": "Rye",
    "B15": "Oats",
    "B16": "Maize",
    "B21": "Potatoes",
    "B22": "Sugar beet",
    "B31": "Sunflower",
    "B32": "Rape and turnip rape",
    "B33": "Soya",
    "B55": "Temporary grassland",
}

# fixed order used for probability columns and confusion matrices
CLASS_CODES = tuple(CLASS_LABELS)
CLASS_INDEX = {code: i for i, code in enumerate(CLASS_CODES)}

CEREALS = ("B11", "B12", "B13", "B14", "B15")

COUNTRIES = (
    "AT", "BE", "BG", "CY", "CZ", "DE", "DK", "EE", "EL", "ES", "FR", "HR", "HU",
    "IT", "LT", "LU", "LV", "NL", "PL", "PT", "RO", "SE", "SI", "SK", "UK",
)

CONDITIONS = ("blurry", "close", "early", "landscape", "object", "post_harvest")


def check_class(code):
    if code not in CLASS_INDEX:
        raise ValueError(f"unknown crop class {code!r}")
    return code


def check_country(code):
    if code not in COUNTRIES:
        raise ValueError(f"unknown country code {code!r}")
    return code


def cereal_grouping(group="CEREAL"):
    """Mapping that merges B11-B15 into one group and leaves other classes alone."""
    return {c: (group if c in CEREALS else c) for c in CLASS_CODES}
