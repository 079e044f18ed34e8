"""Regenerate src/axregion/data/roles.txt (203 known roles + unknown slot).

Role names follow the serialization seen in Chromium-derived accessibility
dumps: ARIA roles lowercase, browser-internal roles CamelCase.
"""

from pathlib import Path

ARIA_ROLES = """
alert alertdialog application article banner blockquote button caption cell
checkbox code columnheader combobox comment complementary contentinfo
definition deletion dialog directory document emphasis feed figure form
generic grid gridcell group heading image insertion link list listbox
listitem log main mark marquee math menu menubar menuitem menuitemcheckbox
menuitemradio meter navigation none note option paragraph presentation
progressbar radio radiogroup region row rowgroup rowheader scrollbar search
searchbox section separator slider spinbutton status strong subscript
suggestion superscript switch tab table tablist tabpanel term textbox time
timer toolbar tooltip tree treegrid treeitem window
""".split()

DPUB_ROLES = [
    "doc-abstract", "doc-acknowledgments", "doc-afterword", "doc-appendix",
    "doc-backlink", "doc-biblioentry", "doc-bibliography", "doc-biblioref",
    "doc-chapter", "doc-colophon", "doc-conclusion", "doc-cover", "doc-credit",
    "doc-credits", "doc-dedication", "doc-endnote", "doc-endnotes",
    "doc-epigraph", "doc-epilogue", "doc-errata", "doc-example",
    "doc-footnote", "doc-foreword", "doc-glossary", "doc-glossref",
    "doc-index", "doc-introduction", "doc-noteref", "doc-notice",
    "doc-pagebreak", "doc-pagefooter", "doc-pageheader", "doc-pagelist",
    "doc-part", "doc-preface", "doc-prologue", "doc-pullquote", "doc-qna",
    "doc-subtitle", "doc-tip", "doc-toc",
]

GRAPHICS_ROLES = ["graphics-document", "graphics-object", "graphics-symbol"]

# Browser-internal roles as they appear in serialized AXTrees.
INTERNAL_ROLES = """
Abbr Audio Blockquote Canvas Caption Caret Client ColorWell Column
ComboBoxGrouping ComboBoxMenuButton ComboBoxSelect ContentDeletion
ContentInsertion Date DateTime Desktop Details DescriptionList
DescriptionListDetail DescriptionListTerm DisclosureTriangle
DisclosureTriangleGrouped EmbeddedObject Feed Figcaption Footer
GenericContainer Header Iframe IframePresentational ImeCandidate
InlineTextBox InputTime Keyboard LabelText LayoutTable LayoutTableCell
LayoutTableRow Legend LineBreak ListGrid ListMarker MathMLMath
MenuListOption MenuListPopup Pane PdfActionableHighlight PdfRoot PluginObject
PopUpButton Portal Pre ProgressIndicator RootWebArea Ruby RubyAnnotation
ScrollBar ScrollView SectionFooter SectionHeader SpinButton Splitter
StaticText SvgRoot TableHeaderContainer TextField TextFieldWithComboBox
TitleBar ToggleButton Video WebView
""".split()


def main() -> None:
    roles = list(dict.fromkeys(ARIA_ROLES + DPUB_ROLES + GRAPHICS_ROLES + INTERNAL_ROLES))
    assert "unknown" not in roles
    print(f"known roles: {len(roles)}")
    if len(roles) != 203:
        raise SystemExit(f"expected 203 known roles, got {len(roles)}; adjust the lists")
    out = Path(__file__).resolve().parents[1] / "src" / "axregion" / "data" / "roles.txt"
    out.write_text("\n".join(roles + ["unknown"]) + "\n")
    print(f"wrote {out} ({len(roles) + 1} entries)")


if __name__ == "__main__":
    main()
