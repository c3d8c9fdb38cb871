package corpus;

import java.util.List;

public class SliceUtil {
    public String prefix(String text, int n) {
        String head = text.substring(0, n);
        return head;
    }

    public List<String> window(List<String> items, int from, int to) {
        return items.subList(from, to);
    }
}
