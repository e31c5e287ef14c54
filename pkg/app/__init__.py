"""ergoloc : ergotropie locale et localisation dans la chaîne XXZ désordonnée."""

__version__ = "0.3.0"
