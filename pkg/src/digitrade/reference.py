"""Fixed classification tables: world regions and digital sector labels."""

from __future__ import annotations

__all__ = ["REGIONS", "REGION_CODES", "DIGITAL_SECTORS", "region_code"]

# Ordinal codes are arbitrary but frozen: tree models only need a
# deterministic ordering, and the logistic stage one-hot encodes them.
REGIONS = ("Africa", "Americas", "Asia", "Europe", "Oceania")

REGION_CODES = {name: i + 1 for i, name in enumerate(REGIONS)}

# Catalogue of digital product sectors recognised by default.  Input data
# may override this list, but brand sectors must come from the configured
# catalogue so downstream grouping stays well defined.
DIGITAL_SECTORS = (
    "Administrative Software",
    "Business Intelligence Software",
    "Cloud Computing",
    "Collaboration Software",
    "Creative Software",
    "Customer Relationship Management Software",
    "Cybersecurity",
    "Data Licensing",
    "Digital Advertising",
    "Digital Music Streaming & Downloads",
    "eBooks",
    "Enterprise Resource Planning Software",
    "File Hosting Service",
    "Gaming Networks",
    "Mobile Application",
    "Mobile Games",
    "Online Dating",
    "Online Education",
    "Online Food Ordering",
    "Online Gambling",
    "Online Marketplace",
    "Operating System",
    "Other Enterprise Software",
    "Payment Service",
    "PC and Console Games",
    "Supply Chain Management Software",
    "Video on Demand",
    "Web Hosting",
    "Office Software",
)


def region_code(region: str) -> int:
    """Ordinal code for a region name; raises KeyError for unknown names."""
    return REGION_CODES[region]
