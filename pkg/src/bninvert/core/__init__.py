"""Core tensor engine, schemas and interfaces."""
