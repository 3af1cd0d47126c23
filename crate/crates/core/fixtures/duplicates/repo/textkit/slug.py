import re


def slugify(text):
    """Lower-case `text` and join its words with hyphens."""
    text = text.lower()
    return re.sub(r"[^a-z0-9]+", "-", text)
