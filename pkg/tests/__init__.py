"""Tests for the Z-Cite Streamlit application."""